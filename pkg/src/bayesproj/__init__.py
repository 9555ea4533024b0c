"""Variable selection and model-space exploration by Kullback-Leibler projection of posterior draws."""
from .datasets import IngestionError, load_birthweight, read_table, standardize, to_dataset
from .glm import Dataset, DegenerateDrawError, ParamPoint, get_family, kl_divergence
from .model_space import (ModelId, ModelTable, PredictiveMixture, expected_model_size,
                          inclusion_probabilities, mixture_by_model, model_frequencies,
                          predictive_mixture, recombine)
from .posterior import (PosteriorSample, PriorSpec, SamplerError, SingularDesignError,
                        sample_bayesian_lasso, sample_gaussian_noninformative,
                        sample_logistic_normal)
from .projection import (CalibrationError, ConstraintSpec, ProjectionEnsemble, ProjectionError,
                         UndefinedLossError, calibrate_lambda, explanatory_loss, project_draw,
                         project_sample)
from .solvers import HeredityGraph, PenaltySpec

__version__ = "0.1.0"
