from safetrain.pipeline.config import (LivenessConfig, SpecError, WorkspaceSpec, load_spec, save_spec,
                                      spec_from_dict)
from safetrain.pipeline.simulate import Trajectory, random_initial_points, simulate
from safetrain.pipeline.synthesis import (STAGES, SynthesisError, SynthesisResult, TrainRecord,
                                          run_synthesis, summary)
