"""The three GP surrogates behind one fitting entry point."""

from ..exceptions import ContractViolation
from .base import TrainingSet
from .classifier import ClassifiedTrainingSet, ClassifierGPFit, classify, fit_classifier_gp
from .inputdep import InputDepGPFit, InputDepHyperparams, fit_inputdep_gp
from .standard import StandardGPFit, fit_standard_gp

KINDS = ("standard", "inputdep", "classifier")


def fit_surrogate(kind, training, eps=None, *, box=None, seed=0, q_level=0.05, link="logit", **kwargs):
    """Fit a surrogate of the given kind.

    ``eps`` (on the training transform scale) is only used by the classifier.
    Extra keyword arguments go to the kind-specific fit function.
    """
    if kind == "standard":
        return fit_standard_gp(training, seed=seed, box=box, **kwargs)
    if kind == "inputdep":
        kwargs.pop("hyper_subsample", None)
        return fit_inputdep_gp(training, seed=seed, box=box, **kwargs)
    if kind == "classifier":
        kwargs.pop("hyper_subsample", None)
        return fit_classifier_gp(
            training, eps, link=link, seed=seed, q_level=q_level, box=box, **kwargs
        )
    raise ContractViolation(f"unknown surrogate kind {kind!r}")


__all__ = [
    "KINDS",
    "TrainingSet",
    "ClassifiedTrainingSet",
    "ClassifierGPFit",
    "InputDepGPFit",
    "InputDepHyperparams",
    "StandardGPFit",
    "classify",
    "fit_classifier_gp",
    "fit_inputdep_gp",
    "fit_standard_gp",
    "fit_surrogate",
]
