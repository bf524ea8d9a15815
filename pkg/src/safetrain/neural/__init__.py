from safetrain.neural.compose import (GlobalController, OutsideSafeSet, compose_global, reach_check,
                                      reached_states)
from safetrain.neural.net import ReluNet, forward, mse_loss_and_grad
from safetrain.neural.projection import (Projection, ProjectionInfeasible, deviation_bound,
                                         deviation_bound_check, project_weights)
from safetrain.neural.regions import LinearRegion, enumerate_regions
from safetrain.neural.training import (TrainConfig, constrained_train, generate_expert_data,
                                       safe_train)
