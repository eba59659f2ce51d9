from __future__ import annotations

from dataclasses import dataclass, field

COMPONENTS = ("supervised", "unsupervised", "feature_matching", "manifold", "ambient",
              "entropy", "ridge")


@dataclass(frozen=True)
class LossReport:
    """Scalar decomposition of one training step.

    ``total`` is the objective the classifier/discriminator minimizes:
    ``sum(coefficients[c] * value_of(c))``.  Components absent from
    ``coefficients`` (e.g. the generator's feature-matching loss in the SSL
    GAN) are reported but do not enter the total.
    """

    total: float
    supervised: float = 0.0
    unsupervised: float = 0.0
    feature_matching: float = 0.0
    manifold: float = 0.0
    ambient: float = 0.0
    entropy: float = 0.0
    ridge: float = 0.0
    coefficients: dict = field(default_factory=dict)

    @classmethod
    def build(cls, coefficients: dict, **values) -> "LossReport":
        total = 0.0
        for name in COMPONENTS:
            if name in coefficients:
                total += coefficients[name] * values.get(name, 0.0)
        return cls(total=total, coefficients=dict(coefficients), **values)

    def weighted_sum(self) -> float:
        return sum(c * getattr(self, name) for name, c in self.coefficients.items())
