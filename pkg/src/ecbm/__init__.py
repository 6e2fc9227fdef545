"""Energy-based concept bottleneck models.

Three jointly trained energy networks over (input, concepts, class)
tuples, gradient-based relaxed inference, exact and gradient-mode concept
intervention, and Boltzmann conditional-interpretation estimators checked
against a brute-force enumeration oracle.
"""

__version__ = "0.1.0"

from .data import (Dataset, GeneratorSpec, concept_accuracy,  # noqa: F401
                   class_accuracy, generate, intervention_curve,
                   overall_concept_accuracy)
from .inference import (InferenceConfig, PredictResult,  # noqa: F401
                        class_given_concept, intervene_exact,
                        intervene_gradient, missing_concept_posterior,
                        predict, predict_batch)
from .interpret import (CondGivenClassQuery, CondQuery,  # noqa: F401
                        EstimatorConfig, JointQuery, MarginalQuery,
                        concept_conditional, concept_conditional_given_class,
                        hard_estimates, joint_concept_importance,
                        marginal_concept_importance)
from .model import (EnergyBreakdown, ModelConfig, Theta,  # noqa: F401
                    class_energy, class_posterior, concept_embedding,
                    concept_energy, extract_features, global_energy,
                    init_theta, joint_energy)
from .oracle import (ClassGivenConceptQuery, InterventionQuery,  # noqa: F401
                     MissingConceptQuery, brute_force_oracle)
from .persist import load_checkpoint, save_checkpoint  # noqa: F401
from .prob import ProbTable  # noqa: F401
from .training import (LossBreakdown, TrainConfig, class_loss,  # noqa: F401
                       concept_loss, global_loss, perturb_concepts,
                       sample_negatives, train)
