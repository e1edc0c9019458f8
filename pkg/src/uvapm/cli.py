"""Command-line front end: ``uvapm <subcommand> ...``.

Every command is a thin shell over library calls. Structured results go to
JSON files named on the command line; a short human summary goes to stdout;
errors print one line to stderr and exit non-zero.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import albedo, builder, fit as fitting, metrics, render
from .errors import FormatError, InsufficientDataError, InvalidInputError, UVAPMError
from .uvcore import load_image, load_mask, save_image

log = logging.getLogger("uvapm")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# build-model / build-detail

def channel_summary(model):
    out = {}
    for name, ch in zip(builder.CHANNEL_NAMES, model.channels):
        ratio = ch.explained_variance_ratio()
        out[name] = {"rank": ch.rank, "explained_variance": float(ratio.sum()),
                     "singular_values": [float(s) for s in ch.singular_values]}
    return out


def cmd_build_model(args):
    paths = builder.list_pngs(args.image_dir)
    images = builder.load_dataset(args.image_dir, args.d)
    if len(images) < 2:
        raise InsufficientDataError(
            f"{args.image_dir}: need at least 2 PNG images, found {len(paths)}")
    model = builder.build_uvapm(images, args.k)
    builder.save_model(model, args.out)
    summary = {"images": len(images), "resolution": model.resolution, "rank": model.rank,
               "total_coefficients": model.n_coeffs, "channels": channel_summary(model)}
    for name, info in summary["channels"].items():
        print(f"channel {name}: rank {info['rank']}, explained variance {info['explained_variance']:.4f}")
    print(f"{model.n_coeffs} total coefficients ({model.rank} per channel) at {model.resolution}x{model.resolution}")
    if args.stats:
        _write_json(args.stats, summary)
    return summary


def residual_statistics(residuals, basis):
    """Mean residual energy and the fraction the detail basis explains."""
    stack = np.stack([np.asarray(r, dtype=np.float64).ravel() for r in residuals])
    energy = float(np.mean(stack ** 2))
    centred = stack - basis.mean.astype(np.float64)
    proj = centred @ basis.basis.astype(np.float64)
    total = float(np.sum(centred ** 2))
    explained = float(np.sum(proj ** 2) / total) if total > 0 else 0.0
    return {"mean_residual_energy": energy, "explained_fraction": explained,
            "rank": basis.rank, "resolution": basis.resolution, "images": len(residuals)}


def cmd_build_detail(args):
    model = builder.load_model(_require_file(args.model, "model file"))
    if not isinstance(model, builder.UVAPMModel):
        raise FormatError(f"{args.model}: expected a UVAPM1 albedo model")
    images = [load_image(p) for p in builder.list_pngs(args.image_dir)]
    if len(images) < 2:
        raise InsufficientDataError(f"{args.image_dir}: need at least 2 PNG images")
    m = args.m
    if m > len(images) - 1:
        log.warning("detail rank %d exceeds N-1 = %d; clamping", m, len(images) - 1)
        m = len(images) - 1
    residuals = builder.extract_residuals(images, model, args.d_detail)
    basis = builder.build_detail_basis(residuals, m)
    builder.save_model(basis, args.out)
    stats = residual_statistics(residuals, basis)
    print(f"detail basis: rank {basis.rank} at {basis.resolution}x{basis.resolution}, "
          f"residual energy {stats['mean_residual_energy']:.6g}, "
          f"explained {stats['explained_fraction']:.4f}")
    if args.stats:
        _write_json(args.stats, stats)
    return stats


# ---------------------------------------------------------------------------
# generate / render

def cmd_generate(args):
    model = builder.load_model(_require_file(args.model, "model file"))
    detail = builder.load_model(_require_file(args.detail, "detail file")) if args.detail else None
    alpha_c, alpha_d = albedo.load_coeffs(_require_file(args.coeffs, "coefficient file"))
    if alpha_d is None and detail is not None:
        img = albedo.generate(model, None, alpha_c, resolution=detail.resolution)
    else:
        img = albedo.generate(model, detail, alpha_c, alpha_d)
    save_image(img, args.out, bits=args.bits)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return img


def load_scene(path, shape_model):
    """Scene JSON: ``beta``, ``xi``, ``pose`` (dict) and ``gamma`` (3x9); all optional."""
    with open(path) as fh:
        scene = json.load(fh)
    unknown = set(scene) - {"beta", "xi", "pose", "gamma"}
    if unknown:
        raise InvalidInputError(f"{path}: unknown scene keys {sorted(unknown)}")
    beta = np.asarray(scene.get("beta", np.zeros(shape_model.n_id)), dtype=np.float64)
    xi = np.asarray(scene.get("xi", np.zeros(shape_model.n_exp)), dtype=np.float64)
    pose = render.PoseCoeffs.from_dict(scene.get("pose", {}))
    gamma = np.asarray(scene.get("gamma", render.neutral_gamma()), dtype=np.float64).reshape(3, 9)
    return beta, xi, pose, gamma


def render_scene(shape_model, mesh, texture_albedo, beta, xi, pose, gamma, width, height):
    verts = render.assemble_shape(shape_model, beta, xi)
    rot = render.euler_to_rotation(pose.pitch, pose.yaw, pose.roll)
    normals = render.vertex_normals(verts @ rot, mesh.triangles)
    nmap, coverage, _ = render.bake_normals_uv(mesh, normals, texture_albedo.shape[0])
    shaded = render.shade(texture_albedo, gamma, nmap, coverage)
    return render.render(verts, mesh, shaded, pose, width, height)


def cmd_render(args):
    shape_model = render.load_shape_model(_require_file(args.shape_model, "shape model"))
    mesh = render.load_mesh(_require_file(args.mesh, "mesh"),
                            _require_file(args.landmark_indices, "landmark index file"))
    texture = load_image(_require_file(args.texture, "texture"))
    beta, xi, pose, gamma = load_scene(_require_file(args.scene, "scene file"), shape_model)
    buffers = render_scene(shape_model, mesh, texture, beta, xi, pose, gamma, args.width, args.height)
    save_image(buffers.image, args.out)
    print(f"wrote {args.out}: {int(buffers.mask.sum())} covered pixels")
    return buffers


# ---------------------------------------------------------------------------
# fit / eval / info

def cmd_fit(args):
    config = fitting.FitConfig.load(_require_file(args.config, "config file")) if args.config \
        else fitting.FitConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.iterations is not None:
        config.iterations = tuple(args.iterations)
    image = load_image(_require_file(args.image, "image"))
    landmarks = fitting.load_landmarks(_require_file(args.landmarks, "landmark file"))
    mask = load_mask(_require_file(args.mask, "mask"),
                     _require_file(args.skin, "skin mask") if args.skin else None)
    shape_model = render.load_shape_model(_require_file(args.shape_model, "shape model"))
    mesh = render.load_mesh(_require_file(args.mesh, "mesh"),
                            _require_file(args.landmark_indices, "landmark index file"))
    model = builder.load_model(_require_file(args.model, "model file"))
    detail = builder.load_model(_require_file(args.detail, "detail file")) if args.detail else None
    result = fitting.fit(image, landmarks, mask, shape_model, mesh, model, detail, config)
    os.makedirs(args.out_dir, exist_ok=True)
    state = result.state
    albedo.save_coeffs(os.path.join(args.out_dir, "coefficients.json"), state.alpha_c, state.alpha_d,
                       beta=state.beta.tolist(), xi=state.xi.tolist(), pose=state.pose.tolist(),
                       gamma=state.gamma.tolist())
    _write_json(os.path.join(args.out_dir, "report.json"), result.report)
    save_image(result.rendered, os.path.join(args.out_dir, "render.png"))
    save_image(result.albedo, os.path.join(args.out_dir, "albedo.png"))
    final = result.report["final"]
    print(f"fit done: photometric {final.get('photometric', 0.0):.6g}, "
          f"landmark {final.get('landmark', 0.0):.6g}")
    return result


def cmd_eval(args):
    a = load_image(_require_file(args.a, "image"))
    b = load_image(_require_file(args.b, "image"))
    scores = metrics.evaluate(a, b)
    print(f"MSE {scores['mse']:.4f}  PSNR {scores['psnr']:.4f} dB  SSIM {scores['ssim']:.6f}")
    if args.json:
        _write_json(args.json, scores)
    return scores


def file_info(path):
    with open(path, "rb") as fh:
        head = fh.read(6)
    if head in (builder.MODEL_MAGIC, builder.DETAIL_MAGIC):
        obj = builder.load_model(path)
        if isinstance(obj, builder.UVAPMModel):
            return {"type": "UVAPM1", "resolution": obj.resolution, "rank": obj.rank,
                    "total_coefficients": obj.n_coeffs, "samples": obj.channels[0].n_samples}
        return {"type": "UVDET1", "resolution": obj.resolution, "rank": obj.rank,
                "samples": obj.n_samples}
    if head == render.SHAPE_MAGIC:
        sm = render.load_shape_model(path)
        return {"type": "UVSHP1", "vertices": sm.n_vertices, "identity": sm.n_id, "expression": sm.n_exp}
    raise FormatError(f"{path}: unrecognised file type", section="magic", offset=0)


def cmd_info(args):
    info = file_info(_require_file(args.path, "file"))
    print(" ".join(f"{k}={v}" for k, v in info.items()))
    if args.json:
        _write_json(args.json, info)
    return info


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="uvapm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-model", help="build the per-channel PCA albedo model")
    s.add_argument("image_dir")
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--d", type=int, default=256)
    s.add_argument("--out", required=True)
    s.add_argument("--stats")
    s.set_defaults(func=cmd_build_model)

    s = sub.add_parser("build-detail", help="build the V-channel residual detail basis")
    s.add_argument("image_dir")
    s.add_argument("--model", required=True)
    s.add_argument("--m", type=int, default=64)
    s.add_argument("--d-detail", type=int, default=512)
    s.add_argument("--out", required=True)
    s.add_argument("--stats")
    s.set_defaults(func=cmd_build_detail)

    s = sub.add_parser("generate", help="decode coefficients to a fused albedo map")
    s.add_argument("--model", required=True)
    s.add_argument("--detail")
    s.add_argument("--coeffs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("fit", help="recover all coefficients from one image")
    s.add_argument("--image", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--skin")
    s.add_argument("--shape-model", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--landmark-indices", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--detail")
    s.add_argument("--config")
    s.add_argument("--iterations", type=int, nargs=3)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", help="render a textured, lit face")
    s.add_argument("--shape-model", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--landmark-indices", required=True)
    s.add_argument("--texture", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--width", type=int, default=224)
    s.add_argument("--height", type=int, default=224)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="MSE / PSNR / SSIM between two images")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("info", help="describe a model, detail or shape file")
    s.add_argument("path")
    s.add_argument("--json")
    s.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        args.func(args)
    except (UVAPMError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"uvapm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
