"""Forcing and parallel semantics over fiber bundles of first-order structures."""

__version__ = "0.1.0"

from .bundle import (BaseBox, FiberBundle, Section, SmoothMap, StructureBundle,
                     compose_map, direct_sum, eval_section, fiber_structure,
                     pack_fiber_tuple, pullback_bundle, pullback_section,
                     term_section, unpack_fiber_tuple)
from .expr import Expr, diff_expr, eval_expr, parse_expr, to_source
from .forcing import (ForcingVerdict, NeighborhoodPolicy, density_check, force,
                      positive_stability_check, spatial_extension)
from .logic import (FiberStructure, Formula, Signature, Term, eval_term,
                    parse_formula, tarski_eval)
from .modelfile import Model, load_model
from .parallel import (ExtensionSet, PathFamily, build_path_family,
                       check_pullback_compatibility, equality_extension_check,
                       extension_to_csv, extension_to_svg, horizontal_extension,
                       parallel_forced, vertical_extension)
from .transport import (Connection, TransportResult, curvature_estimate,
                        direct_sum_connection, lift_uniqueness_gap,
                        parallel_transport, pullback_connection)

__all__ = [
    "BaseBox", "Connection", "Expr", "ExtensionSet", "FiberBundle",
    "FiberStructure", "Formula", "ForcingVerdict", "Model", "NeighborhoodPolicy",
    "PathFamily", "Section", "Signature", "SmoothMap", "StructureBundle", "Term",
    "TransportResult", "build_path_family", "check_pullback_compatibility",
    "compose_map", "curvature_estimate", "density_check", "diff_expr",
    "direct_sum", "direct_sum_connection", "equality_extension_check",
    "eval_expr", "eval_section", "eval_term", "extension_to_csv",
    "extension_to_svg", "fiber_structure", "force", "horizontal_extension",
    "lift_uniqueness_gap", "load_model", "pack_fiber_tuple", "parallel_forced",
    "parallel_transport", "parse_expr", "parse_formula",
    "positive_stability_check", "pullback_bundle", "pullback_connection",
    "pullback_section", "spatial_extension", "tarski_eval", "term_section",
    "to_source", "unpack_fiber_tuple", "vertical_extension",
]
