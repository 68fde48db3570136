"""Benchmark environments, policies, feature maps, datasets and value oracles."""

from .core import (
    Dataset,
    FeatureMap,
    McEstimate,
    TabularMdp,
    TabularPolicy,
    Transition,
    exact_tabular_values,
    generate_dataset,
    mc_values,
    onehot_features,
    rbf_grid_features,
)
from .continuous import (
    MountainCarContinuous,
    PuddleWorld,
    UpDownPolicy,
    VelocitySignPolicy,
    mountain_car_continuous,
    probe_grid,
    puddle_world,
)
from .tabular import (
    TriangleValueFunction,
    boyan_chain,
    random_mdp,
    random_mdp_policies,
    single_action_policy,
    triangle_mdp,
    triangle_transitions,
    triangle_value,
    triangle_value_derivatives,
)
