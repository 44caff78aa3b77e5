"""Executable mean-dimension and embedding procedures on sampled ℤᵏ systems.

Submodules:

- ``systems``: finite samples, generator permutations, ``d_[n]`` metrics, builders
- ``covers``: covers, orders, Lebesgue numbers, widim search, nerves, partitions of unity
- ``meandim``: normalized widim curves and plateau estimates
- ``genlin``: general-position tests and pattern matrices
- ``embedders``: observables, delay maps, eps-embeddings, local constructions
- ``rokhlin``: tower systems, circle and torus towers, the tower-driven pipeline
- ``cli``: the ``meandim-lab`` command
"""

__version__ = "0.1.0"

_EXPORTS = {
    "SampledSpace": "systems", "SampledAction": "systems", "circle_rotation": "systems",
    "torus_rotation": "systems", "product_action": "systems", "dynamical_space": "systems",
    "period_table": "systems", "system_from_json": "systems", "space_from_json": "systems",
    "Cover": "covers", "widim": "covers", "mesh": "covers", "order": "covers",
    "lebesgue_number": "covers", "nerve": "covers", "partition_of_unity": "covers",
    "mdim_curve": "meandim", "mdim_estimate": "meandim", "mdim_table": "meandim",
    "PatternMatrix": "genlin", "enumerate_patterns": "genlin", "pattern_generic_independent": "genlin",
    "pit_nonzero": "genlin", "random_extension_independent": "genlin",
    "Observable": "embedders", "random_trig": "embedders", "delay_map_Zk": "embedders",
    "delay_map_Z": "embedders", "separation_report": "embedders", "genericity_experiment": "embedders",
    "eps_embed": "embedders", "tietze_extend": "embedders", "takens_local_construct": "embedders",
    "TowerSystem": "rokhlin", "verify_towers": "rokhlin", "build_circle_towers": "rokhlin",
    "product_towers": "rokhlin", "exact_towers": "rokhlin", "FactorMap": "rokhlin",
    "pullback": "rokhlin", "theorem2_pipeline": "rokhlin",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'meandim_lab' has no attribute {name!r}")
    from importlib import import_module
    return getattr(import_module(f"meandim_lab.{module}"), name)
