"""Base classifiers: input form -> Saab conv module -> feature view -> LSR FC module.

Also holds the rosters for the three diversity schemes (S1 filter sizes,
S2 feature subsets, S3 input forms).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .data_io import LabeledImageSet
from .fc_lsr import FCArch, FCModel, apply_fc, fit_fc_module
from .image_forms import InputForm, apply_form
from .saab import CPCABank, ConvArch, ConvModel, apply_cpca, fit_conv_pipeline, fit_cpca

log = logging.getLogger(__name__)


class ViewKind(str, Enum):
    CONV2 = "CONV2"
    CONV1_CHECKER_A = "CONV1_CHECKER_A"
    CONV1_CHECKER_B = "CONV1_CHECKER_B"
    CONV1_RD = "CONV1_RD"
    CONV2_RD = "CONV2_RD"


@dataclass(frozen=True)
class FeatureView:
    kind: ViewKind = ViewKind.CONV2
    k1: int = 30  # C-PCA dims per conv1 channel
    k2: int = 20  # C-PCA dims per conv2 channel
    lambda0: float = 0.75
    lambda1: float = 0.75
    lambda2: float = 0.75
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ViewKind(self.kind))
        for name in ("lambda0", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class FeatureViewState:
    view: FeatureView
    layer: int  # 1 or 2
    bank: CPCABank
    columns: np.ndarray | None = None  # selected columns of the C-PCA output

    @property
    def output_dim(self) -> int:
        return self.bank.output_dim if self.columns is None else len(self.columns)


@dataclass(frozen=True)
class BaseConfig:
    name: str = "FF-1"
    tag: str = "S1"
    form: InputForm = InputForm.GRAY
    filter_sizes: tuple[int, int] = (5, 5)
    kernel_counts: tuple[int, int] = (6, 16)
    view: FeatureView = field(default_factory=FeatureView)
    fc_dims: tuple[int, ...] = (120, 84, 10)
    class_count: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "form", InputForm(self.form))
        object.__setattr__(self, "filter_sizes", tuple(int(s) for s in self.filter_sizes))
        object.__setattr__(self, "kernel_counts", tuple(int(m) for m in self.kernel_counts))
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        if isinstance(self.view, dict):
            object.__setattr__(self, "view", FeatureView(**self.view))
        if self.tag not in ("S1", "S2", "S3"):
            raise ValueError(f"scheme tag must be S1, S2 or S3, got {self.tag!r}")
        if self.filter_sizes not in ((3, 3), (3, 5), (5, 3), (5, 5)):
            raise ValueError(f"filter sizes {self.filter_sizes} are not one of the four scheme-1 pairs")

    @property
    def conv_arch(self) -> ConvArch:
        return ConvArch(self.filter_sizes, self.kernel_counts, self.form.channel_count)

    @property
    def fc_arch(self) -> FCArch:
        return FCArch(self.fc_dims, self.class_count)

    @property
    def conv_key(self) -> tuple:
        """Configs with equal keys share one fitted conv model."""
        return (self.form.value, self.filter_sizes, self.kernel_counts, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["form"] = self.form.value
        d["view"]["kind"] = self.view.kind.value
        d["filter_sizes"] = list(self.filter_sizes)
        d["kernel_counts"] = list(self.kernel_counts)
        d["fc_dims"] = list(self.fc_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaseConfig":
        d = dict(d)
        d["view"] = FeatureView(**d.get("view", {}))
        return cls(**d)


@dataclass(frozen=True)
class BaseClassifier:
    config: BaseConfig
    conv: ConvModel
    view_state: FeatureViewState
    fc: FCModel


def _n_selected(fraction: float, total: int, what: str) -> int:
    n = int(np.floor(fraction * total))
    if n < 1:
        raise ValueError(f"{what}: fraction {fraction} of {total} selects no features")
    return n


def checkerboard(height: int, width: int, parity: int) -> np.ndarray:
    rows, cols = np.indices((height, width))
    return np.flatnonzero(((rows + cols) % 2 == parity).ravel())


def select_feature_view(f1: np.ndarray, f2: np.ndarray, view: FeatureView) -> FeatureViewState:
    """Fit the feature view on training conv outputs (pooled conv1, pooled conv2)."""
    rng = np.random.default_rng(view.seed)
    kind = view.kind
    if kind is ViewKind.CONV2:
        return FeatureViewState(view, 2, fit_cpca(f2, view.k2))
    if kind is ViewKind.CONV2_RD:
        bank = fit_cpca(f2, view.k2)
        keep = _n_selected(view.lambda2, view.k2, "rule 2")
        cols = [k * view.k2 + np.sort(rng.choice(view.k2, keep, replace=False)) for k in range(f2.shape[1])]
        return FeatureViewState(view, 2, bank, np.concatenate(cols))
    _, c, h, w = f1.shape
    if kind in (ViewKind.CONV1_CHECKER_A, ViewKind.CONV1_CHECKER_B):
        pos = checkerboard(h, w, 0 if kind is ViewKind.CONV1_CHECKER_A else 1)
        return FeatureViewState(view, 1, fit_cpca(f1, view.k1, positions=pos))
    # rule 1
    n_pos = _n_selected(view.lambda0, h * w, "rule 1 positions")
    positions = [np.sort(rng.choice(h * w, n_pos, replace=False)) for _ in range(c)]
    bank = fit_cpca(f1, view.k1, positions=positions)
    keep = _n_selected(view.lambda1, view.k1, "rule 1 components")
    cols = [k * view.k1 + np.sort(rng.choice(view.k1, keep, replace=False)) for k in range(c)]
    return FeatureViewState(view, 1, bank, np.concatenate(cols))


def view_features(state: FeatureViewState, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    x = apply_cpca(state.bank, f1 if state.layer == 1 else f2)
    return x if state.columns is None else x[:, state.columns]


def prepare_images(config: BaseConfig, data: LabeledImageSet) -> np.ndarray:
    images = apply_form(data, config.form).images
    if images.shape[1] != config.form.channel_count:
        raise ValueError(f"form {config.form.value} expects {config.form.channel_count} channels")
    return images


def _fit_head(config: BaseConfig, conv: ConvModel, f1, f2, labels) -> tuple[BaseClassifier, np.ndarray]:
    state = select_feature_view(f1, f2, config.view)
    feats = view_features(state, f1, f2)
    fc = fit_fc_module(feats, labels, config.fc_arch, seed=config.seed)
    return BaseClassifier(config, conv, state, fc), apply_fc(fc, feats)


def train_base(config: BaseConfig, train: LabeledImageSet) -> BaseClassifier:
    images = prepare_images(config, train)
    conv = fit_conv_pipeline(images, config.conv_arch, seed=config.seed)
    f1, f2 = conv.forward(images)
    return _fit_head(config, conv, f1, f2, train.labels)[0]


def predict_base(classifier: BaseClassifier, data: LabeledImageSet) -> tuple[np.ndarray, np.ndarray]:
    """Raw decision vectors (n, C) and argmax labels (ties -> lowest index)."""
    f1, f2 = classifier.conv.forward(prepare_images(classifier.config, data))
    vectors = apply_fc(classifier.fc, view_features(classifier.view_state, f1, f2))
    return vectors, np.argmax(vectors, axis=1)


def _groups(configs) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, cfg in enumerate(configs):
        groups.setdefault(cfg.conv_key, []).append(i)
    return groups


def _run_groups(work, groups, workers: int):
    """Run `work(members)` for each conv group; results land by index so order
    never depends on the worker count."""
    if workers <= 1 or len(groups) <= 1:
        for members in groups:
            work(members)
        return
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(work, members) for members in groups]:
            fut.result()


def train_roster(configs, train: LabeledImageSet, workers: int = 1) -> tuple[list[BaseClassifier], list[np.ndarray]]:
    """Train every config, sharing conv fits and forward passes between configs
    with the same conv key. Returns the classifiers and their train decision
    vectors, both in roster order."""
    configs = list(configs)
    bases: list = [None] * len(configs)
    vectors: list = [None] * len(configs)

    def work(members):
        first = configs[members[0]]
        images = prepare_images(first, train)
        conv = fit_conv_pipeline(images, first.conv_arch, seed=first.seed)
        f1, f2 = conv.forward(images)
        for i in members:
            log.info("training base %s", configs[i].name)
            bases[i], vectors[i] = _fit_head(configs[i], conv, f1, f2, train.labels)

    _run_groups(work, list(_groups(configs).values()), workers)
    return bases, vectors


def predict_roster(bases, data: LabeledImageSet, workers: int = 1) -> list[np.ndarray]:
    """Decision vectors of every base, computing each shared conv forward pass once."""
    bases = list(bases)
    out: list = [None] * len(bases)

    def work(members):
        b0 = bases[members[0]]
        f1, f2 = b0.conv.forward(prepare_images(b0.config, data))
        for i in members:
            out[i] = apply_fc(bases[i].fc, view_features(bases[i].view_state, f1, f2))

    _run_groups(work, list(_groups([b.config for b in bases]).values()), workers)
    return out


# --- diversity rosters -------------------------------------------------------

DATASET_DEFAULTS = {
    "mnist": {"fc_dims": (120, 84, 10), "k1": 30, "k2": 20},
    "cifar10": {"fc_dims": (200, 100, 10), "k1": 20, "k2": 12},
}

# Table-1 order: FF-1 (5,5), FF-2 (5,3), FF-3 (3,5), FF-4 (3,3)
SCHEME1_SIZES = ((5, 5), (5, 3), (3, 5), (3, 3))
# kernel counts keyed by filter sizes; a 3x3 first layer cannot host more than
# 9*C kernels, which fixes the pairing
KERNELS_RGB = {(5, 5): (32, 64), (3, 5): (24, 64), (5, 3): (32, 64), (3, 3): (24, 48)}
KERNELS_SINGLE = {(5, 5): (16, 32), (3, 5): (8, 32), (5, 3): (16, 32), (3, 3): (8, 24)}
KERNELS_MNIST = {s: (6, 16) for s in SCHEME1_SIZES}


def _kernel_table(dataset: str, form: InputForm) -> dict:
    if dataset == "mnist":
        return KERNELS_MNIST
    return KERNELS_RGB if form is InputForm.RGB else KERNELS_SINGLE


def default_form(dataset: str) -> InputForm:
    return InputForm.GRAY if dataset == "mnist" else InputForm.RGB


def base_config(dataset: str, name: str, tag: str, form=None, sizes=(5, 5), view_kind=ViewKind.CONV2,
                view_seed: int = 0, seed: int = 0, lam: float = 0.75) -> BaseConfig:
    d = DATASET_DEFAULTS[dataset]
    form = InputForm(form) if form is not None else default_form(dataset)
    view = FeatureView(kind=view_kind, k1=d["k1"], k2=d["k2"], lambda0=lam, lambda1=lam, lambda2=lam, seed=view_seed)
    return BaseConfig(
        name=name,
        tag=tag,
        form=form,
        filter_sizes=sizes,
        kernel_counts=_kernel_table(dataset, form)[tuple(sizes)],
        view=view,
        fc_dims=d["fc_dims"],
        seed=seed,
    )


def scheme1_roster(dataset: str, seed: int = 0) -> list[BaseConfig]:
    return [
        base_config(dataset, f"S1-FF{i + 1}", "S1", sizes=s, seed=seed)
        for i, s in enumerate(SCHEME1_SIZES)
    ]


def scheme2_roster(dataset: str, which: str = "ED-4", seed: int = 0) -> list[BaseConfig]:
    """Feature-subset rosters on the FF-1 conv model.

    ED-1: Conv2 + both checkerboard halves; ED-2: six rule-1 draws;
    ED-3: twelve rule-2 draws; ED-4: ED-2 + ED-3.
    """
    mk = lambda name, kind, vs=0: base_config(dataset, name, "S2", view_kind=kind, view_seed=vs, seed=seed)  # noqa: E731
    ed1 = [
        mk("S2-Conv2", ViewKind.CONV2),
        mk("S2-Conv1-1", ViewKind.CONV1_CHECKER_A),
        mk("S2-Conv1-2", ViewKind.CONV1_CHECKER_B),
    ]
    ed2 = [mk(f"S2-Conv1-RD{i}", ViewKind.CONV1_RD, i) for i in range(6)]
    ed3 = [mk(f"S2-Conv2-RD{i}", ViewKind.CONV2_RD, i) for i in range(12)]
    rosters = {"ED-1": ed1, "ED-2": ed2, "ED-3": ed3, "ED-4": ed2 + ed3}
    if which not in rosters:
        raise ValueError(f"unknown scheme-2 ensemble {which!r}")
    return rosters[which]


def scheme3_roster(dataset: str, seed: int = 0) -> list[BaseConfig]:
    laws = [InputForm(f"LAWS_L{i}") for i in range(1, 10)]
    if dataset == "mnist":
        forms = [InputForm.GRAY] + laws
    else:
        forms = [
            InputForm.RGB,
            InputForm.YCBCR_Y, InputForm.YCBCR_CB, InputForm.YCBCR_CR,
            InputForm.LAB_L, InputForm.LAB_A, InputForm.LAB_B,
        ] + laws
    return [base_config(dataset, f"S3-{f.value}", "S3", form=f, seed=seed) for f in forms]


def reseed(config: BaseConfig, offset: int) -> BaseConfig:
    return replace(config, seed=config.seed + offset, view=replace(config.view, seed=config.view.seed + offset))
