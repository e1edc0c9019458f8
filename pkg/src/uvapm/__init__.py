"""UV-space albedo parametric model: build, generate, render and fit."""
from .errors import (ConfigError, EmptyMaskError, FitError, FormatError, InsufficientDataError,
                     InvalidInputError, InvalidRankError, OptimizerError, UVAPMError)
from .uvcore import (FaceMask, hsv_to_rgb, load_image, load_mask, merge_channels, resize,
                     rgb_to_hsv, save_image, split_channels)
from .builder import (ChannelBasis, DetailBasis, UVAPMModel, build_detail_basis, build_uvapm,
                      encode_coarse, encode_detail, extract_residuals, load_model, save_model,
                      snapshot_pca)
from .albedo import AlbedoPipeline, decode_coarse, decode_detail, fuse, generate
from .render import (FaceMesh, LinearShapeModel, PoseCoeffs, assemble_shape, load_mesh,
                     load_shape_model, project, rasterize, shade, sh_basis)
from .fit import FitConfig, FitState, LandmarkSet
from .metrics import evaluate, mse, psnr, ssim

__version__ = "0.1.0"
