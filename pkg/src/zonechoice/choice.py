"""Choice models: follow, frequency rule, and a learned multinomial logit.

Each model maps (student, candidate zoned school) to a probability
distribution over all schools. The learned model wraps a from-scratch
softmax regression trained by full-batch gradient descent, exposed with a
scikit-learn estimator surface so it composes with the wider ecosystem.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from zonechoice.district import District, DomainError
from zonechoice.features import ChoiceFeaturizer, nearest_school_indices

_PROB_ATOL = 1e-9


class ChoiceModelError(RuntimeError):
    """A choice model cannot produce a distribution for this input."""


class ChoiceModel:
    """Base: a distribution over schools given (student, zoned school)."""

    name = "base"

    def __init__(self, district: District):
        self.district = district

    def fit(self, student_idx=None):
        """Train on the given students (all by default). No-op for rules."""
        return self

    def probabilities(self, student_idx: int, zoned_idx: int) -> np.ndarray:
        raise NotImplementedError

    def choice_tensor(self) -> np.ndarray:
        """(students, candidate zoned school, school) probability tensor."""
        N, S = self.district.num_students, self.district.num_schools
        out = np.empty((N, S, S))
        for n in range(N):
            for s in range(S):
                out[n, s] = self.probabilities(n, s)
        return out

    def fingerprint(self) -> str:
        return hashlib.sha256(self.name.encode()).hexdigest()


class FollowModel(ChoiceModel):
    """Every student attends their zoned school with probability 1."""

    name = "follow"

    def probabilities(self, student_idx: int, zoned_idx: int) -> np.ndarray:
        p = np.zeros(self.district.num_schools)
        p[zoned_idx] = 1.0
        return p

    def choice_tensor(self) -> np.ndarray:
        N, S = self.district.num_students, self.district.num_schools
        return np.broadcast_to(np.eye(S), (N, S, S)).copy()


class FrequencyModel(ChoiceModel):
    """Rule-based mix: zoned school, nearby magnets, nearest schools.

    Cases are applied in priority order (zoned; magnets among the nearest
    12, split equally; each of the nearest 5) skipping already claimed
    schools, then the result is renormalized to sum to 1.
    """

    name = "frequency"

    ZONED_MASS = 0.65
    MAGNET_MASS = 0.20
    NEAR_MASS = 0.03
    MAGNET_RADIUS = 12
    NEAR_RADIUS = 5

    def __init__(self, district: District):
        super().__init__(district)
        S = district.num_schools
        self._near_mag = nearest_school_indices(district, min(self.MAGNET_RADIUS, S))
        self._near5 = nearest_school_indices(district, min(self.NEAR_RADIUS, S))

    def probabilities(self, student_idx: int, zoned_idx: int) -> np.ndarray:
        d = self.district
        block = d.student_block[student_idx]
        magnets_near = [
            int(s) for s in self._near_mag[block] if d.magnet_mask[s]
        ]
        if not magnets_near:
            raise ChoiceModelError(
                f"no magnet among the nearest {self.MAGNET_RADIUS} schools of "
                f"block {d.block_ids[block]}"
            )
        p = np.zeros(d.num_schools)
        p[zoned_idx] = self.ZONED_MASS
        claimed = {zoned_idx}
        share = self.MAGNET_MASS / len(magnets_near)
        for s in magnets_near:
            if s not in claimed:
                p[s] = share
                claimed.add(s)
        for s in self._near5[block]:
            s = int(s)
            if s not in claimed:
                p[s] = self.NEAR_MASS
                claimed.add(s)
        return p / p.sum()

    def choice_tensor(self) -> np.ndarray:
        N, S = self.district.num_students, self.district.num_schools
        out = np.empty((N, S, S))
        # distributions depend on the student only through their block
        cache: dict[int, np.ndarray] = {}
        for n in range(N):
            b = int(self.district.student_block[n])
            if b not in cache:
                rows = np.empty((S, S))
                for s in range(S):
                    rows[s] = self.probabilities(n, s)
                cache[b] = rows
            out[n] = cache[b]
        return out


class MultinomialLogit(BaseEstimator, ClassifierMixin):
    """Softmax regression trained by full-batch gradient descent.

    Features are z-scored with statistics frozen at fit time; a bias
    column is appended and excluded from the L2 penalty. The step size
    adapts: steps that would increase the regularized loss are rejected
    with a halved learning rate, accepted steps grow it slightly, so the
    training loss is non-increasing over accepted steps.
    """

    def __init__(self, learning_rate=1.0, max_iter=2000, l2=1e-4, tol=1e-8,
                 n_classes=None):
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.l2 = l2
        self.tol = tol
        self.n_classes = n_classes

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        C = self.n_classes or int(y.max()) + 1
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale_ = scale

        Xn = self._design(X)
        Y = np.zeros((len(y), C))
        Y[np.arange(len(y)), y] = 1.0

        W = np.zeros((C, Xn.shape[1]))
        lr = float(self.learning_rate)
        loss, grad = self._loss_and_grad(W, Xn, Y, self.l2)
        self.loss_history_ = [loss]
        for _ in range(self.max_iter):
            stepped = False
            for _ in range(30):
                W_new = W - lr * grad
                new_loss, new_grad = self._loss_and_grad(W_new, Xn, Y, self.l2)
                if not np.isfinite(new_loss):
                    raise DomainError(
                        f"non-finite training loss (lr={lr}, l2={self.l2})"
                    )
                if new_loss <= loss:
                    W, loss, grad = W_new, new_loss, new_grad
                    self.loss_history_.append(loss)
                    lr *= 1.1
                    stepped = True
                    break
                lr *= 0.5
            if not stepped:
                break
            if len(self.loss_history_) > 1 and (
                self.loss_history_[-2] - loss < self.tol
            ):
                break
        self.coef_ = W
        self.classes_ = np.arange(C)
        return self

    @staticmethod
    def _loss_and_grad(W, Xn, Y, l2):
        Z = Xn @ W.T
        Z -= Z.max(axis=1, keepdims=True)
        expZ = np.exp(Z)
        P = expZ / expZ.sum(axis=1, keepdims=True)
        n = len(Xn)
        eps = 1e-300
        loss = -np.log((P * Y).sum(axis=1) + eps).mean()
        penalty = W.copy()
        penalty[:, -1] = 0.0  # bias column unregularized
        loss += 0.5 * l2 * (penalty ** 2).sum()
        grad = (P - Y).T @ Xn / n + l2 * penalty
        return loss, grad

    def _design(self, X):
        Xn = (np.asarray(X, dtype=float) - self.mean_) / self.scale_
        return np.hstack([Xn, np.ones((len(Xn), 1))])

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.mean_):
            raise DomainError(
                f"expected {len(self.mean_)} features, got shape {X.shape}"
            )
        return self._design(X) @ self.coef_.T

    def predict_proba(self, X):
        Z = self.decision_function(X)
        Z -= Z.max(axis=1, keepdims=True)
        expZ = np.exp(Z)
        return expZ / expZ.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class LogitChoiceModel(ChoiceModel):
    """Learned choice model: featurizer + multinomial logit."""

    name = "logit"

    def __init__(self, district: District, estimator: MultinomialLogit | None = None):
        super().__init__(district)
        self.featurizer = ChoiceFeaturizer(district)
        self.estimator = estimator or MultinomialLogit(
            n_classes=district.num_schools
        )

    def fit(self, student_idx=None):
        d = self.district
        idx = (
            np.arange(d.num_students)
            if student_idx is None
            else np.asarray(student_idx, dtype=int)
        )
        zoned = d.status_quo_assignment[d.student_block[idx]]
        X = self.featurizer.matrix(idx, zoned)
        y = d.student_actual[idx]
        self.estimator.fit(X, y)
        return self

    def probabilities(self, student_idx: int, zoned_idx: int) -> np.ndarray:
        x = self.featurizer.vector(student_idx, zoned_idx)
        return self.estimator.predict_proba(x[None, :])[0]

    def choice_tensor(self) -> np.ndarray:
        N, S = self.district.num_students, self.district.num_schools
        out = np.empty((N, S, S))
        students = np.arange(N)
        for s in range(S):
            X = self.featurizer.matrix(students, np.full(N, s))
            out[:, s, :] = self.estimator.predict_proba(X)
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.name.encode())
        h.update(self.estimator.coef_.tobytes())
        h.update(self.estimator.mean_.tobytes())
        h.update(self.estimator.scale_.tobytes())
        return h.hexdigest()

    # -- persistence ------------------------------------------------------

    FORMAT_VERSION = 1

    def save(self, path: str | Path) -> None:
        est = self.estimator
        payload = {
            "format_version": self.FORMAT_VERSION,
            "kind": self.name,
            "schools": list(self.district.school_ids),
            "feature_names": self.featurizer.feature_names,
            "mean": est.mean_.tolist(),
            "scale": est.scale_.tolist(),
            "weights": est.coef_.tolist(),
            "config": {
                "learning_rate": est.learning_rate,
                "max_iter": est.max_iter,
                "l2": est.l2,
                "tol": est.tol,
            },
            "district_fingerprint": self.district.fingerprint(),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path, district: District) -> "LogitChoiceModel":
        payload = json.loads(Path(path).read_text())
        if payload.get("kind") != "logit":
            raise DomainError(f"not a logit model file: {path}")
        model = cls(district, MultinomialLogit(**payload["config"],
                                               n_classes=district.num_schools))
        if payload["feature_names"] != model.featurizer.feature_names:
            raise DomainError("model feature order does not match this district")
        est = model.estimator
        est.mean_ = np.array(payload["mean"])
        est.scale_ = np.array(payload["scale"])
        est.coef_ = np.array(payload["weights"])
        est.classes_ = np.arange(district.num_schools)
        return model


# Gradient-boosted trees are out of scope; third parties can register a
# factory here and select it from the pipeline by name.
MODEL_REGISTRY = {
    "follow": FollowModel,
    "frequency": FrequencyModel,
    "logit": LogitChoiceModel,
}


def make_model(name: str, district: District) -> ChoiceModel:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise DomainError(
            f"unknown choice model {name!r}; available: {sorted(MODEL_REGISTRY)}"
        ) from None
    return factory(district)
