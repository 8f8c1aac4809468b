"""Chip-state classification: idle subtraction, PCA scores and a linear SVM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .images import LabeledImageSet
from .recon import bin_map

SCORE_UNITS = {"T": 1.0, "uT": 1e6, "nT": 1e9, "pT": 1e12}


# --------------------------------------------------------------------------- preprocessing

def nearest_idle_index(active_times, idle_times):
    """Index of the idle acquisition closest in time; the earlier one wins ties."""
    idle_times = np.asarray(idle_times, dtype=float)
    if idle_times.size == 0:
        raise UsageError("at least one idle image is required")
    order = np.argsort(idle_times, kind="stable")
    t = idle_times[order]
    a = np.asarray(active_times, dtype=float)
    hi = np.clip(np.searchsorted(t, a, side="left"), 0, t.size - 1)
    lo = np.clip(hi - 1, 0, t.size - 1)
    pick_lo = np.abs(a - t[lo]) <= np.abs(t[hi] - a)
    return order[np.where(pick_lo, lo, hi)]


def preprocess(raw, idles=None, bin_factor=1):
    """Subtract the nearest-in-time idle image from each active image, then bin.

    Parameters
    ----------
    raw : LabeledImageSet
    idles : LabeledImageSet, optional
        Defaults to ``raw.idles``.
    bin_factor : int
    """
    idles = raw.idles if idles is None else idles
    if idles is None or len(idles) == 0:
        raise UsageError("at least one idle image is required")
    if idles.shape != raw.shape:
        raise UsageError(f"idle images {idles.shape} do not match active images {raw.shape}")
    pick = nearest_idle_index(raw.times, idles.times)
    dtype = np.result_type(raw.images.dtype, idles.images.dtype)
    first = bin_map(raw.images[0].astype(dtype) - idles.images[pick[0]].astype(dtype),
                    bin_factor)
    out = np.empty((len(raw),) + first.shape, dtype=dtype)
    out[0] = first
    for k in range(1, len(raw)):
        diff = raw.images[k].astype(dtype) - idles.images[pick[k]].astype(dtype)
        out[k] = diff if bin_factor == 1 else bin_map(diff, bin_factor)
    meta = dict(raw.meta, preprocess={"bin_factor": int(bin_factor), "idle_pairing": "nearest"})
    return LabeledImageSet(out, raw.labels.copy(), raw.times.copy(), raw.scenario,
                           raw.pixel_size * bin_factor, raw.region, meta)


# --------------------------------------------------------------------------- split

@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.75
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise UsageError("train_fraction must lie in (0, 1)")


def split_indices(labels, cfg=SplitConfig()):
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed)]))
    train = []
    if cfg.stratified:
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            if idx.size < 2:
                raise UsageError(f"class {c} has a single image; cannot stratify")
            n_train = int(np.floor(cfg.train_fraction * idx.size + 1e-9))
            n_train = min(max(n_train, 1), idx.size - 1)
            train.extend(rng.permutation(idx)[:n_train])
    else:
        n_train = int(np.floor(cfg.train_fraction * labels.size + 1e-9))
        train.extend(rng.permutation(labels.size)[:n_train])
    train = np.sort(np.array(train, dtype=int))
    test = np.setdiff1d(np.arange(labels.size), train)
    return train, test


def split(images, cfg=SplitConfig()):
    """Stratified, seeded train/test split; both parts keep acquisition order."""
    tr, te = split_indices(images.labels, cfg)
    return images.subset(tr), images.subset(te)


# --------------------------------------------------------------------------- PCA

@dataclass(eq=False)
class PCABasis:
    """Mean image, unit-norm components and explained-variance fractions."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    singular_values: np.ndarray
    n_train: int = 0

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def shape(self):
        return self.mean.shape

    def reconstruct(self, scores):
        """Images from their scores (inverse of :func:`pca_score`)."""
        s = np.atleast_2d(scores)
        npx = self.mean.size
        flat = self.mean.reshape(-1) + npx * s @ self.components.reshape(self.k, -1)
        return flat.reshape((s.shape[0],) + self.shape)


def _flat_chunks(X, size=1 << 16):
    P = X.shape[1]
    for s in range(0, P, size):
        yield slice(s, min(s + size, P))


def pca_fit(train, k=9):
    """Principal components of a training image stack.

    The centred images are decomposed through their Gram matrix, which is
    equivalent to a thin SVD and cheap when images far outnumber samples
    in pixels. Components are sign-normalized so their largest-magnitude
    pixel is positive.
    """
    imgs = train.images if isinstance(train, LabeledImageSet) else np.asarray(train)
    if imgs.ndim != 3:
        raise UsageError("expected a stack of images (n, rows, cols)")
    n = imgs.shape[0]
    if not 1 <= k <= n:
        raise UsageError(f"k={k} must lie between 1 and the number of images ({n})")
    X = imgs.reshape(n, -1)
    mean = np.zeros(X.shape[1])
    for sl in _flat_chunks(X):
        mean[sl] = X[:, sl].astype(np.float64).mean(axis=0)
    G = np.zeros((n, n))
    for sl in _flat_chunks(X):
        Xc = X[:, sl].astype(np.float64) - mean[sl]
        G += Xc @ Xc.T
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    keep = min(k, n)
    W = np.zeros((keep, X.shape[1]))
    for sl in _flat_chunks(X):
        Xc = X[:, sl].astype(np.float64) - mean[sl]
        W[:, sl] = evecs[:, :keep].T @ Xc
    # orthonormalize (stable even for the near-null trailing directions)
    for i in range(keep):
        for j in range(i):
            W[i] -= (W[j] @ W[i]) * W[j]
        nrm = np.linalg.norm(W[i])
        if nrm == 0:
            raise UsageError("training images span fewer than k directions")
        W[i] /= nrm
        for j in range(i):
            W[i] -= (W[j] @ W[i]) * W[j]
        W[i] /= np.linalg.norm(W[i])
        if W[i, np.argmax(np.abs(W[i]))] < 0:
            W[i] = -W[i]
    ratio = evals[:keep] / total if total > 0 else np.zeros(keep)
    shape = imgs.shape[1:]
    return PCABasis(mean.reshape(shape), W.reshape((keep,) + shape), ratio,
                    np.sqrt(evals[:keep]), n)


def pca_score(basis, images):
    """Scores ``S_i = (1/MN) sum W_i (B - mean)`` for one image or a stack."""
    a = np.asarray(images.images if isinstance(images, LabeledImageSet) else images)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.shape[1:] != basis.shape:
        raise UsageError(f"image shape {a.shape[1:]} does not match the basis {basis.shape}")
    npx = basis.mean.size
    X = a.reshape(a.shape[0], -1)
    Wf = basis.components.reshape(basis.k, -1)
    mf = basis.mean.reshape(-1)
    S = np.zeros((a.shape[0], basis.k))
    for sl in _flat_chunks(X):
        S += (X[:, sl].astype(np.float64) - mf[sl]) @ Wf[:, sl].T
    S /= npx
    return S[0] if single else S


# --------------------------------------------------------------------------- SVM

@dataclass(eq=False)
class BinarySVM:
    """One pairwise classifier; ``decision > 0`` votes for ``positive``."""

    positive: int
    negative: int
    w: np.ndarray
    b: float
    alpha: np.ndarray
    y: np.ndarray
    index: np.ndarray
    iterations: int
    kkt_gap: float

    def decision(self, X):
        return X @ self.w + self.b


@dataclass(eq=False)
class SVMModel:
    classes: np.ndarray
    machines: list
    C: float
    tie_break: str = "smallest"
    scale_mean: np.ndarray | None = None
    scale_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.machines[0].w.size

    @property
    def weights(self):
        return np.array([m.w for m in self.machines])

    @property
    def biases(self):
        return np.array([m.b for m in self.machines])

    def transform(self, scores):
        s = np.atleast_2d(np.asarray(scores, dtype=float))
        if self.scale_mean is not None:
            s = (s - self.scale_mean) / self.scale_std
        return s


def smo_solve(K, y, C, tol=1e-4, max_iter=10_000_000):
    """Soft-margin SVM dual by sequential minimal optimization.

    Minimizes ``0.5 a^T Q a - sum(a)`` with ``Q = (y y^T) * K`` subject to
    ``0 <= a <= C`` and ``y^T a = 0``, selecting working pairs by maximal
    violation and second-order gain. Stops when the KKT gap ``m - M`` falls
    below ``tol``.

    Returns
    -------
    alpha, b, iterations, gap
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    diagQ = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    it = 0
    gap = np.inf
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        m = yG[i]
        M = yG[low].min()
        gap = m - M
        if gap < tol:
            break
        cand = np.flatnonzero(low & (yG < m))
        bgain = m - yG[cand]
        a = diagQ[i] + diagQ[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, tau)
        j = int(cand[np.argmin(-(bgain * bgain) / a)])
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diagQ[i] + diagQ[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else tau
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = diagQ[i] + diagQ[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else tau
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        G += Q[:, i] * (alpha[i] - ai_old) + Q[:, j] * (alpha[j] - aj_old)
        it += 1
    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = -np.mean(yG[free])
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = yG[up].max() if up.any() else 0.0
        lo = yG[low].min() if low.any() else 0.0
        rho = -0.5 * (hi + lo)
    return alpha, -rho, it, gap


def dual_objective(alpha, y, K):
    """Dual value ``sum(a) - 0.5 a^T Q a`` (to be maximized)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kkt_violation(alpha, y, K, b, C):
    """Largest violation of the soft-margin KKT conditions by any sample."""
    margin = y * (K @ (alpha * y) + b)
    v = np.where(alpha <= 0, np.maximum(0.0, 1.0 - margin),
                 np.where(alpha >= C, np.maximum(0.0, margin - 1.0), np.abs(margin - 1.0)))
    return float(v.max()) if v.size else 0.0


def svm_train(scores, labels, C=6.0, tol=1e-4, standardize=False, max_iter=10_000_000):
    """One-vs-one linear SVMs on score vectors.

    Each pair ``(a, b)`` of classes with ``a < b`` gets a machine voting
    for ``a`` when its decision is positive.
    """
    X = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.asarray(labels)
    if X.shape[0] != labels.size:
        raise UsageError("need one label per score vector")
    if not C > 0:
        raise UsageError("C must be positive")
    classes = np.unique(labels)
    if classes.size < 2:
        raise UsageError("training needs at least two classes")
    mean = std = None
    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        X = (X - mean) / std
    machines = []
    for ia, a in enumerate(classes):
        for b_ in classes[ia + 1:]:
            idx = np.flatnonzero((labels == a) | (labels == b_))
            Xp = X[idx]
            y = np.where(labels[idx] == a, 1.0, -1.0)
            K = Xp @ Xp.T
            alpha, b, it, gap = smo_solve(K, y, C, tol, max_iter)
            w = (alpha * y) @ Xp
            machines.append(BinarySVM(int(a), int(b_), w, float(b), alpha, y, idx, it,
                                      float(gap)))
    return SVMModel(classes, machines, float(C), "smallest", mean, std,
                    {"tol": tol, "standardize": bool(standardize)})


def svm_votes(model, scores):
    X = model.transform(scores)
    if X.shape[1] != model.dim:
        raise UsageError(f"score dimension {X.shape[1]} does not match the model ({model.dim})")
    pos = {int(c): k for k, c in enumerate(model.classes)}
    votes = np.zeros((X.shape[0], model.classes.size), dtype=int)
    for m in model.machines:
        d = m.decision(X)
        win = np.where(d > 0, pos[m.positive], pos[m.negative])
        np.add.at(votes, (np.arange(X.shape[0]), win), 1)
    return votes


def svm_predict(model, scores):
    """Majority vote over the pairwise machines; ties go to the fewest ring oscillators."""
    single = np.ndim(scores) == 1
    votes = svm_votes(model, scores)
    pred = model.classes[np.argmax(votes, axis=1)]  # classes ascending: first max is smallest
    return pred[0] if single else pred


# --------------------------------------------------------------------------- evaluation

@dataclass(eq=False)
class Evaluation:
    classes: np.ndarray
    counts: np.ndarray
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    total_accuracy: float
    predictions: np.ndarray
    truth: np.ndarray

    def adjacent_error_fraction(self):
        """Share of errors that land on a neighbouring state (NaN if no errors)."""
        pos = {int(c): k for k, c in enumerate(self.classes)}
        wrong = self.predictions != self.truth
        if not wrong.any():
            return float("nan")
        d = np.array([abs(pos[int(p)] - pos[int(t)])
                      for p, t in zip(self.predictions[wrong], self.truth[wrong])])
        return float(np.mean(d == 1))

    def to_dict(self):
        return {
            "classes": [int(c) for c in self.classes],
            "counts": self.counts.tolist(),
            "confusion": self.confusion.tolist(),
            "per_class_accuracy": [float(v) for v in self.per_class_accuracy],
            "total_accuracy": float(self.total_accuracy),
        }


def confusion_from_predictions(truth, pred, classes=None):
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0:
        raise UsageError("the test set is empty")
    classes = np.unique(np.concatenate([truth, pred])) if classes is None else np.asarray(classes)
    pos = {int(c): k for k, c in enumerate(classes)}
    counts = np.zeros((classes.size, classes.size), dtype=np.int64)
    for t, p in zip(truth, pred):
        counts[pos[int(t)], pos[int(p)]] += 1
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(rows > 0, counts / np.maximum(rows, 1), 0.0)
    per_class = np.diag(conf).copy()
    total = float(np.mean(truth == pred))
    return Evaluation(classes, counts, conf, per_class, total, pred, truth)


def evaluate(model, basis, test, unit_scale=1.0):
    """Row-normalized confusion matrix and accuracies on a test set."""
    if len(test) == 0:
        raise UsageError("the test set is empty")
    S = pca_score(basis, test) * unit_scale
    pred = svm_predict(model, S)
    return confusion_from_predictions(test.labels, pred, model.classes)


def cross_validate_C(scores, labels, grid=(0.1, 1.0, 6.0, 10.0, 100.0), folds=5, seed=0,
                     tol=1e-4):
    """Stratified k-fold accuracy for each candidate C.

    Returns ``(best_C, {C: mean accuracy})``; ties keep the earliest C.
    """
    X = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    fold_of = np.empty(labels.size, dtype=int)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold_of[idx] = np.arange(idx.size) % folds
    acc = {}
    for C in grid:
        hits = []
        for f in range(folds):
            tr, te = fold_of != f, fold_of == f
            if not te.any() or np.unique(labels[tr]).size < 2:
                continue
            model = svm_train(X[tr], labels[tr], C, tol)
            hits.append(np.mean(svm_predict(model, X[te]) == labels[te]))
        acc[float(C)] = float(np.mean(hits)) if hits else float("nan")
    best = max(acc, key=lambda c: (acc[c], -list(acc).index(c)))
    return best, acc


@dataclass(eq=False)
class TrainedClassifier:
    """PCA basis and SVM trained together, with the score unit they assume."""

    basis: PCABasis
    svm: SVMModel
    score_unit: str = "pT"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.score_unit not in SCORE_UNITS:
            raise UsageError(f"score unit must be one of {sorted(SCORE_UNITS)}")

    @property
    def unit_scale(self):
        return SCORE_UNITS[self.score_unit]

    def scores(self, images):
        return pca_score(self.basis, images) * self.unit_scale

    def predict(self, images):
        return svm_predict(self.svm, np.atleast_2d(self.scores(images)))

    def evaluate(self, test):
        return evaluate(self.svm, self.basis, test, self.unit_scale)


def train_classifier(train, k=9, C=6.0, score_unit="pT", tol=1e-4, standardize=False):
    """Fit the PCA basis and pairwise SVMs on a preprocessed training set."""
    basis = pca_fit(train, k)
    S = pca_score(basis, train) * SCORE_UNITS[score_unit]
    svm = svm_train(S, train.labels, C, tol, standardize)
    return TrainedClassifier(basis, svm, score_unit,
                             {"k": int(k), "C": float(C), "n_train": len(train)})
