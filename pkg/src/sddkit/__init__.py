"""Coarse 3D face synthesis with decoupled static/dynamic surface detail.

A linear morphable model produces the coarse face (identity +
expression + joint posing); fine detail is a displacement map split
into a static, identity-owned part and a dynamic, expression-driven
part blended by a signed surface-tension map. Everything is seeded and
deterministic; model data lives in a bundle directory on disk.
"""

from .basisbuild import (
    LinearBasis,
    SampleSet,
    ScanConfig,
    generate_scans,
    pca_fit,
    project,
    reconstruct,
)
from .bundle import (
    BasisDims,
    ModelBundle,
    build_bundle,
    load_bundle,
    load_coefficients,
    save_bundle,
    save_coefficients,
)
from .detail import (
    DetailModel,
    DetailResult,
    TensionMap,
    age_probabilities,
    apply_displacement,
    compose_detail,
    dynamic_coefficients,
    interpolate_dynamic,
    polarized_displacements,
    run_sd_detail,
    static_displacement,
    tension_uv_map,
    vertex_tension,
)
from .errors import (
    GeometryError,
    NumericalError,
    ParseError,
    SddkError,
    ValidationError,
)
from .facepatch import face_patch_mesh, face_patch_skinning, face_patch_topology
from .fitting import (
    FitOptions,
    FitResult,
    FitTarget,
    fit_coefficients,
    landmark_gradient,
    landmark_jacobian,
    load_fit_options,
    load_fit_target,
)
from .losses import (
    LossWeights,
    default_embedding,
    detail_loss,
    identity_loss,
    kd_loss,
    kl_coeff_loss,
    landmark_loss,
    photo_loss,
    reg_loss,
    total_loss,
    vertex_loss,
)
from .mesh import Mesh, Topology, compute_normals
from .morphable import (
    CoefficientSet,
    FaceModel,
    Pose,
    SkinningData,
    regress_joints,
    rodrigues,
    rodrigues_derivative,
    skin,
    synthesize_albedo,
    synthesize_shape,
)
from .objio import load_obj, save_obj
from .render import (
    Camera,
    Lighting,
    RenderResult,
    landmark_positions,
    project_landmarks,
    project_points,
    rasterize,
    render_coefficients,
    sh_basis,
    shade,
    uv_normal_map,
    write_png,
)
from .uvfield import UvField, export_png16, load_field, sample_uv, save_field

__version__ = "0.1.0"

__all__ = [
    "BasisDims",
    "Camera",
    "CoefficientSet",
    "DetailModel",
    "DetailResult",
    "FaceModel",
    "FitOptions",
    "FitResult",
    "FitTarget",
    "GeometryError",
    "Lighting",
    "LinearBasis",
    "LossWeights",
    "Mesh",
    "ModelBundle",
    "NumericalError",
    "ParseError",
    "Pose",
    "RenderResult",
    "SampleSet",
    "ScanConfig",
    "SddkError",
    "SkinningData",
    "TensionMap",
    "Topology",
    "UvField",
    "ValidationError",
    "age_probabilities",
    "apply_displacement",
    "build_bundle",
    "compose_detail",
    "compute_normals",
    "default_embedding",
    "detail_loss",
    "dynamic_coefficients",
    "export_png16",
    "face_patch_mesh",
    "face_patch_skinning",
    "face_patch_topology",
    "fit_coefficients",
    "generate_scans",
    "identity_loss",
    "interpolate_dynamic",
    "kd_loss",
    "kl_coeff_loss",
    "landmark_gradient",
    "landmark_jacobian",
    "landmark_loss",
    "landmark_positions",
    "load_bundle",
    "load_coefficients",
    "load_field",
    "load_fit_options",
    "load_fit_target",
    "load_obj",
    "pca_fit",
    "photo_loss",
    "polarized_displacements",
    "project",
    "project_landmarks",
    "project_points",
    "rasterize",
    "reconstruct",
    "reg_loss",
    "regress_joints",
    "render_coefficients",
    "rodrigues",
    "rodrigues_derivative",
    "run_sd_detail",
    "sample_uv",
    "save_bundle",
    "save_coefficients",
    "save_field",
    "save_obj",
    "sh_basis",
    "shade",
    "skin",
    "static_displacement",
    "synthesize_albedo",
    "synthesize_shape",
    "tension_uv_map",
    "total_loss",
    "uv_normal_map",
    "vertex_loss",
    "vertex_tension",
    "write_png",
]
