"""Camera localisation against LoD2/LoD3 semantic building models.

Render a virtual image of the model from a GNSS-derived pose, match it
against the optical image, lift the matches to 3D through the ray-cast
buffers and resect the camera pose.
"""
from .errors import LodLocError
from .features import Method, match_pipeline
from .lift3d import Correspondence2D3D, build_correspondences, lift
from .raycaster import RaycastBuffers, cast_scene, render_normal_image
from .resection import ResectionProblem, ResectionSolution, dlt_init, gauss_newton_resect, resect_frame
from .semantic_mesh import LoD, SemanticMesh, SemanticModel, Semantics, load_model, parse_model, triangulate
from .virtual_camera import CameraIntrinsics, CameraPose, GnssTrack, build_lookat_pose, project

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "CameraPose", "Correspondence2D3D", "GnssTrack", "LoD", "LodLocError", "Method",
    "RaycastBuffers", "ResectionProblem", "ResectionSolution", "SemanticMesh", "SemanticModel", "Semantics",
    "build_correspondences", "build_lookat_pose", "cast_scene", "dlt_init", "gauss_newton_resect", "lift",
    "load_model", "match_pipeline", "parse_model", "project", "render_normal_image", "resect_frame", "triangulate",
]
