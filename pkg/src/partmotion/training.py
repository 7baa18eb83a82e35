"""Training loops, the prediction pipeline, and the evaluation harness.

Training is single-worker and deterministic given the config seed: the
network init, the shuffle order, and every downstream prediction derive
from it. Evaluation may fan out across shapes since each shape is scored
independently.
"""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import diffcore as dc
from .cluster import assemble_segmentation, dbscan_labels, default_min_pts
from .config import RunConfig, _net_from_dict, load_config
from .datagen import ShapeRecord, make_instances, same_part_matrix
from .errors import ConfigError, DataError, NumericError
from .geom import TYPE_T, TYPE_TR, MobilitySpec, unit
from .losses import MOBILITY_CLASSES, baseline_loss, l_mob, total_motion_loss
from .metrics import (
    MetricsReport,
    MobilityEval,
    ShapeAPRecord,
    cluster_confidence,
    evaluate_mobility,
    match_moving_parts,
    prediction_matches,
    summarize,
)
from .mobfit import fit_from_displacements
from .nets import (
    DirectBaseline,
    DisplacementNet,
    EncoderPlan,
    MobilityRegressor,
    ShapePrediction,
    build_plan,
    feature_distance_matrix,
)

# clustering radius on the learned distance matrix: half the contrastive margin
CLUSTER_EPS = 40.0

# rigid fits worse than this mean squared pair error are treated as
# non-parametric motion and no mobility is reported for the part; generated
# umbrella sequences sit at 9e-4 and above, rigid categories at ~1e-32
NONRIGID_RESIDUAL = 5e-4

LogFn = Callable[[str], None]


# ---------------------------------------------------------------------------
# instance preparation


@dataclass
class PreparedInstance:
    """One training instance with its sampling plan and loss inputs cached."""

    category: str
    shape_id: str
    t: int
    plan: EncoderPlan
    targets: np.ndarray           # (n, N, 3)
    labels: np.ndarray            # (N,)
    mov_idx: np.ndarray
    same_mov: np.ndarray          # 0 same part, 1 different
    n_true: int
    specs: Optional[list[MobilitySpec]]

    @property
    def points(self) -> np.ndarray:
        return self.plan.points


def prepare_instances(records: Sequence[ShapeRecord], config: RunConfig) -> list[PreparedInstance]:
    """Expand shapes into per-state instances and precompute their plans.

    Plans depend only on the points and the network geometry, so one pass
    here is shared by every training run over the same dataset.
    """
    out = []
    for rec in records:
        for inst in make_instances(rec.sequence, rec.shape_id):
            mov_idx, same = same_part_matrix(inst.labels)
            out.append(
                PreparedInstance(
                    category=inst.category,
                    shape_id=inst.shape_id,
                    t=inst.t,
                    plan=build_plan(inst.points, config.net),
                    targets=inst.targets,
                    labels=inst.labels,
                    mov_idx=mov_idx,
                    same_mov=same,
                    n_true=inst.n_true,
                    specs=inst.specs,
                )
            )
    return out


# ---------------------------------------------------------------------------
# displacement network training


def _instance_loss(net: DisplacementNet, inst: PreparedInstance, config: RunConfig):
    maps = net.hallucinate(inst.plan)
    seg_logits = dist_mov = same = None
    if not config.no_seg:
        p0 = np.zeros_like(inst.points) if config.no_p0 else inst.points
        # the heads read the maps as data: the margin term must not be able
        # to trade displacement quality for feature separation
        frozen = [dc.constant(m.value) for m in maps]
        seg_logits, feats = net.segment(dc.constant(p0), frozen)
        dist_mov = dc.pairwise_row_distances(dc.gather_rows(feats, inst.mov_idx))
        same = inst.same_mov
    return total_motion_loss(
        maps,
        inst.targets,
        inst.points,
        inst.labels,
        dist_mov,
        seg_logits,
        same,
        inst.n_true,
        config.weights,
        no_geom=config.no_geom,
        no_disp=config.no_disp,
        no_mot=config.no_mot,
        no_seg=config.no_seg,
    )


def train_displacement(
    instances: Sequence[PreparedInstance],
    config: RunConfig,
    checkpoint_dir: Optional[Path] = None,
    log: Optional[LogFn] = None,
) -> tuple[DisplacementNet, list[str]]:
    """Fit the displacement net; returns it with the loss log lines."""
    if not instances:
        raise DataError("no training instances")
    n_maps = int(instances[0].targets.shape[0])
    net = DisplacementNet(
        n_maps, np.random.default_rng([config.seed, 0]), config.net, use_rnn=not config.no_rnn
    )
    opt = dc.Adam(
        net.parameters(),
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
        max_grad_norm=config.max_grad_norm,
    )
    shuffle = np.random.default_rng([config.seed, 1])
    lines: list[str] = []

    def emit(line: str) -> None:
        lines.append(line)
        if log:
            log(line)

    step = 0
    for epoch in range(config.epochs):
        order = shuffle.permutation(len(instances))
        epoch_losses = []
        for idx in order:
            inst = instances[int(idx)]
            try:
                breakdown = _instance_loss(net, inst, config)
                value = float(breakdown.total.value)
                if not np.isfinite(value):
                    raise NumericError("non-finite loss value")
                opt.zero_grad()
                dc.backward(breakdown.total)
                opt.step()
            except NumericError as exc:
                raise NumericError(f"training aborted at step {step}: {exc}") from exc
            epoch_losses.append(value)
            if config.log_every and step % config.log_every == 0:
                parts = " ".join(
                    f"{k} {v:.6f}" for k, v in breakdown.terms.items() if k != "total"
                )
                emit(f"step {step} epoch {epoch} loss {value:.6f} {parts}")
            step += 1
            if checkpoint_dir is not None and config.checkpoint_every:
                if step % config.checkpoint_every == 0:
                    dc.save_params(
                        Path(checkpoint_dir) / f"step_{step:06d}.params", net.parameters()
                    )
        emit(f"epoch {epoch} mean_loss {float(np.mean(epoch_losses)):.6f}")
    return net, lines


# ---------------------------------------------------------------------------
# mobility regressor and baseline training (one sample per ground-truth part)


@dataclass
class PartSample:
    plan: EncoderPlan
    labels: np.ndarray
    part_id: int
    channels: Optional[np.ndarray]       # regressor input, None for the baseline
    type_idx: int
    direction: np.ndarray
    position: Optional[np.ndarray]


def part_samples(instances: Sequence[PreparedInstance], with_channels: bool) -> list[PartSample]:
    """Start-state samples for every moving part that has a known mobility."""
    out = []
    for inst in instances:
        if inst.t != 1 or inst.specs is None:
            continue
        for part_id, spec in enumerate(inst.specs, start=1):
            channels = None
            if with_channels:
                member = np.flatnonzero(inst.labels == part_id)
                channels = MobilityRegressor.component_channels(
                    inst.points, inst.targets, member
                )
            out.append(
                PartSample(
                    plan=inst.plan,
                    labels=inst.labels,
                    part_id=part_id,
                    channels=channels,
                    type_idx=MOBILITY_CLASSES.index(spec.tau),
                    direction=spec.direction,
                    position=spec.position,
                )
            )
    return out


def _fit_head(samples, config, seed_lane, step_fn, params, log=None):
    """Shared epoch loop for the two small supervised heads."""
    opt = dc.Adam(
        params,
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
        max_grad_norm=config.max_grad_norm,
    )
    shuffle = np.random.default_rng([config.seed, seed_lane])
    lines: list[str] = []
    step = 0
    for epoch in range(config.mobility_epochs):
        losses = []
        for idx in shuffle.permutation(len(samples)):
            sample = samples[int(idx)]
            try:
                loss = step_fn(sample)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise NumericError("non-finite loss value")
                opt.zero_grad()
                dc.backward(loss)
                opt.step()
            except NumericError as exc:
                raise NumericError(f"training aborted at step {step}: {exc}") from exc
            losses.append(value)
            step += 1
        line = f"epoch {epoch} mean_loss {float(np.mean(losses)):.6f}"
        lines.append(line)
        if log:
            log(line)
    return lines


def train_mobility(
    instances: Sequence[PreparedInstance],
    config: RunConfig,
    log: Optional[LogFn] = None,
) -> tuple[Optional[MobilityRegressor], list[str]]:
    """Fit the mobility regressor on ground-truth maps.

    Returns None when no instance carries mobility parameters (purely
    non-parametric corpora such as umbrella-only training).
    """
    samples = part_samples(instances, with_channels=True)
    if not samples:
        return None, []
    n_maps = int(instances[0].targets.shape[0])
    reg = MobilityRegressor(n_maps, np.random.default_rng([config.seed, 2]), config.net)

    def step_fn(sample: PartSample):
        type_logits, axis_out = reg.forward(sample.plan, sample.channels)
        return l_mob(type_logits, axis_out, sample.type_idx, sample.direction, sample.position)

    lines = _fit_head(samples, config, 3, step_fn, reg.parameters(), log)
    return reg, [f"mobility {line}" for line in lines]


def train_baseline(
    instances: Sequence[PreparedInstance],
    config: RunConfig,
    log: Optional[LogFn] = None,
) -> tuple[DirectBaseline, list[str]]:
    """Fit the direct baseline: static cloud in, segmentation plus one mobility."""
    samples = part_samples(instances, with_channels=False)
    if not samples:
        raise DataError("baseline training needs shapes with mobility parameters")
    baseline = DirectBaseline(np.random.default_rng([config.seed, 4]), config.net)

    def step_fn(sample: PartSample):
        seg, type_logits, axis_out = baseline.forward(sample.plan)
        binary = (sample.labels == sample.part_id).astype(np.int64)
        return baseline_loss(
            seg, binary, type_logits, axis_out,
            sample.type_idx, sample.direction, sample.position,
        ).total

    lines = _fit_head(samples, config, 5, step_fn, baseline.parameters(), log)
    return baseline, [f"baseline {line}" for line in lines]


# ---------------------------------------------------------------------------
# prediction pipeline


def _compose_spec(
    tau: str, d: np.ndarray, x: np.ndarray, part_maps: np.ndarray,
    fit_spec: Optional[MobilitySpec],
) -> MobilitySpec:
    """Regressor (type, axis) plus a motion range read off the maps."""
    d = unit(d)
    if tau == TYPE_T:
        span = float((part_maps.mean(axis=1) @ d).sum())
        if span < 0.0:
            d, span = -d, -span
        return MobilitySpec(TYPE_T, d, None, (0.0, span))
    range_ = (0.0, 0.0)
    if fit_spec is not None and fit_spec.tau != TYPE_T:
        range_ = fit_spec.range_
    slide = None
    if tau == TYPE_TR:
        slide = (0.0, 0.0)
        if fit_spec is not None and fit_spec.tau == TYPE_TR:
            slide = fit_spec.slide_range
    return MobilitySpec(tau, d, x, range_, slide)


@dataclass
class Pipeline:
    """A trained model bundle exposing flat shape prediction."""

    config: RunConfig
    net: Optional[DisplacementNet] = None
    regressor: Optional[MobilityRegressor] = None
    baseline: Optional[DirectBaseline] = None

    def predict(self, points: np.ndarray) -> ShapePrediction:
        points = np.asarray(points, dtype=np.float64)
        plan = build_plan(points, self.config.net)
        if self.baseline is not None:
            return self._predict_baseline(plan)
        if self.net is None:
            raise ConfigError("pipeline has no displacement network")
        map_nodes = self.net.hallucinate(plan)
        maps = np.stack([m.value for m in map_nodes])
        n = points.shape[0]
        if self.config.no_seg:
            # trained without the segmentation terms: threshold the motion
            moving = np.linalg.norm(maps, axis=2).mean(axis=0) > self.config.theta_stop
            mov_idx = np.flatnonzero(moving)
            labels = assemble_segmentation(n, mov_idx, np.zeros(mov_idx.size, dtype=np.int64))
            confidences = {1: 1.0} if mov_idx.size else {}
        else:
            p0 = np.zeros_like(points) if self.config.no_p0 else points
            seg_logits, feat_nodes = self.net.segment(dc.constant(p0), map_nodes)
            mov_idx = np.flatnonzero(seg_logits.value.argmax(axis=1) == 1)
            if mov_idx.size:
                dist = feature_distance_matrix(feat_nodes.value[mov_idx])
                ids = dbscan_labels(dist, CLUSTER_EPS, default_min_pts(mov_idx.size))
                labels = assemble_segmentation(n, mov_idx, ids)
                confidences = {
                    int(c) + 1: cluster_confidence(dist[np.ix_(ids == c, ids == c)])
                    for c in range(int(ids.max()) + 1)
                }
            else:
                labels = np.zeros(n, dtype=np.int64)
                confidences = {}
        mobilities: dict[int, Optional[MobilitySpec]] = {}
        fits: dict[int, Optional[MobilitySpec]] = {}
        for part in sorted(int(p) for p in np.unique(labels) if p != 0):
            member = np.flatnonzero(labels == part)
            mobilities[part], fits[part] = self._part_mobility(plan, maps, member)
        return ShapePrediction(maps, labels, mobilities, confidences, fits)

    def _part_mobility(self, plan: EncoderPlan, maps: np.ndarray, member: np.ndarray):
        """(regressor spec, mobfit cross-check spec) for one component."""
        fit = fit_from_displacements(plan.points[member], maps[:, member])
        fit_spec = None
        if fit is not None and fit.residual <= NONRIGID_RESIDUAL:
            fit_spec = fit.spec
        if self.regressor is None or self.config.no_mob_net:
            return fit_spec, fit_spec
        channels = MobilityRegressor.component_channels(plan.points, maps, member)
        tau, d, x = self.regressor.predict(plan, channels)
        return _compose_spec(tau, d, x, maps[:, member], fit_spec), fit_spec

    def _predict_baseline(self, plan: EncoderPlan) -> ShapePrediction:
        moving, tau, d, x = self.baseline.predict(plan)
        n = plan.points.shape[0]
        mov_idx = np.flatnonzero(moving)
        labels = assemble_segmentation(n, mov_idx, np.zeros(mov_idx.size, dtype=np.int64))
        maps = np.zeros((self.config.n_frames, n, 3))
        mobilities: dict[int, Optional[MobilitySpec]] = {}
        fits: dict[int, Optional[MobilitySpec]] = {}
        confidences: dict[int, float] = {}
        if mov_idx.size:
            if tau == TYPE_T:
                spec = MobilitySpec(TYPE_T, unit(d), None, (0.0, 0.0))
            else:
                slide = (0.0, 0.0) if tau == TYPE_TR else None
                spec = MobilitySpec(tau, unit(d), x, (0.0, 0.0), slide)
            mobilities[1] = spec
            fits[1] = None
            confidences[1] = 1.0
        return ShapePrediction(maps, labels, mobilities, confidences, fits)


# ---------------------------------------------------------------------------
# checkpointing

MODEL_FILE = "model.json"
DISP_PARAMS = "displacement.params"
MOB_PARAMS = "mobility.params"
BASE_PARAMS = "baseline.params"


def save_pipeline(out_dir: str | Path, pipeline: Pipeline) -> Path:
    """Write checkpoints plus the model sidecar and echo the config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = pipeline.config
    config.echo_into(out)
    meta = {
        "n_maps": config.n_frames,
        "theta_stop": config.theta_stop,
        "seed": config.seed,
        "use_rnn": not config.no_rnn,
        "basenet": config.basenet,
        "no_mob_net": config.no_mob_net,
        "net": dataclasses.asdict(config.net),
    }
    if pipeline.baseline is not None:
        dc.save_params(out / BASE_PARAMS, pipeline.baseline.parameters())
    if pipeline.net is not None:
        dc.save_params(out / DISP_PARAMS, pipeline.net.parameters())
    if pipeline.regressor is not None:
        dc.save_params(out / MOB_PARAMS, pipeline.regressor.parameters())
    (out / MODEL_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_pipeline(run_dir: str | Path) -> Pipeline:
    """Rebuild a Pipeline from a run directory written by save_pipeline."""
    run = Path(run_dir)
    meta_path = run / MODEL_FILE
    if not meta_path.exists():
        raise DataError(f"no {MODEL_FILE} under {run}")
    meta = json.loads(meta_path.read_text())
    config_path = run / "config.json"
    if not config_path.exists():
        raise DataError(f"no config.json under {run}")
    config = load_config(config_path)
    net_cfg = _net_from_dict(meta["net"])
    rng = np.random.default_rng(0)    # values are overwritten by the checkpoint
    if meta.get("basenet"):
        baseline = DirectBaseline(rng, net_cfg)
        dc.load_into(baseline.parameters(), run / BASE_PARAMS)
        return Pipeline(config, baseline=baseline)
    net = DisplacementNet(int(meta["n_maps"]), rng, net_cfg, use_rnn=bool(meta["use_rnn"]))
    dc.load_into(net.parameters(), run / DISP_PARAMS)
    regressor = None
    if (run / MOB_PARAMS).exists():
        regressor = MobilityRegressor(int(meta["n_maps"]), rng, net_cfg)
        dc.load_into(regressor.parameters(), run / MOB_PARAMS)
    return Pipeline(config, net=net, regressor=regressor)


def run_training(
    config: RunConfig,
    records: Sequence[ShapeRecord],
    out_dir: Optional[str | Path] = None,
    log: Optional[LogFn] = None,
    instances: Optional[Sequence[PreparedInstance]] = None,
) -> Pipeline:
    """Train whatever the config asks for and optionally persist the run."""
    if instances is None:
        instances = prepare_instances(records, config)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if config.basenet:
        baseline, lines = train_baseline(instances, config, log)
        pipeline = Pipeline(config, baseline=baseline)
    else:
        net, lines = train_displacement(
            instances, config,
            checkpoint_dir=None if out_dir is None else Path(out_dir),
            log=log,
        )
        regressor = None
        if not config.no_mob_net:
            regressor, mob_lines = train_mobility(instances, config, log)
            lines += mob_lines
        pipeline = Pipeline(config, net=net, regressor=regressor)
    if out_dir is not None:
        out = save_pipeline(out_dir, pipeline)
        (out / "loss.log").write_text("".join(line + "\n" for line in lines))
    return pipeline


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class ShapeEval:
    """Scores for one test shape."""

    shape_id: str
    category: str
    ap_record: ShapeAPRecord
    net_evals: list[MobilityEval]
    fit_evals: list[MobilityEval]
    prediction: ShapePrediction


@dataclass
class EvalResult:
    """Test-set metrics, primary and mobfit cross-check."""

    report: MetricsReport
    fit_report: MetricsReport
    shapes: list[ShapeEval] = field(default_factory=list)


def _eval_shape(pipeline: Pipeline, rec: ShapeRecord) -> ShapeEval:
    pred = pipeline.predict(rec.frames[0])
    ap_record = prediction_matches(pred.labels, rec.labels, pred.confidences)
    net_evals: list[MobilityEval] = []
    fit_evals: list[MobilityEval] = []
    if rec.specs is not None:
        matches = match_moving_parts(pred.labels, rec.labels)
        for m, gt_spec in zip(matches, rec.specs):
            pred_net = pred.mobilities.get(m.pred_part) if m.pred_part is not None else None
            pred_fit = pred.fits.get(m.pred_part) if m.pred_part is not None else None
            net_evals.append(evaluate_mobility(pred_net, gt_spec))
            fit_evals.append(evaluate_mobility(pred_fit, gt_spec))
    return ShapeEval(rec.shape_id, rec.category, ap_record, net_evals, fit_evals, pred)


def evaluate_model(
    records: Sequence[ShapeRecord], pipeline: Pipeline, workers: int = 1
) -> EvalResult:
    """Score a test split; shapes are independent so workers may fan out."""
    if not records:
        raise DataError("no shapes to evaluate")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            shapes = list(pool.map(lambda r: _eval_shape(pipeline, r), records))
    else:
        shapes = [_eval_shape(pipeline, r) for r in records]
    ap_records = [s.ap_record for s in shapes]
    return EvalResult(
        report=summarize([e for s in shapes for e in s.net_evals], ap_records),
        fit_report=summarize([e for s in shapes for e in s.fit_evals], ap_records),
        shapes=shapes,
    )


def evaluate_oracle(records: Sequence[ShapeRecord]) -> EvalResult:
    """Feed ground truth back as predictions; the end-to-end identity check."""
    if not records:
        raise DataError("no shapes to evaluate")
    shapes = []
    for rec in records:
        parts = sorted(int(p) for p in np.unique(rec.labels) if p != 0)
        confidences = {p: 1.0 for p in parts}
        ap_record = prediction_matches(rec.labels, rec.labels, confidences)
        evals = []
        if rec.specs is not None:
            evals = [evaluate_mobility(spec, spec) for spec in rec.specs]
        pred = ShapePrediction(
            maps=rec.sequence.displacement_maps,
            labels=rec.labels.copy(),
            mobilities={} if rec.specs is None else dict(enumerate(rec.specs, start=1)),
            confidences=confidences,
        )
        shapes.append(ShapeEval(rec.shape_id, rec.category, ap_record, evals, list(evals), pred))
    ap_records = [s.ap_record for s in shapes]
    return EvalResult(
        report=summarize([e for s in shapes for e in s.net_evals], ap_records),
        fit_report=summarize([e for s in shapes for e in s.fit_evals], ap_records),
        shapes=shapes,
    )


def evaluate_regressor_on_gt(
    records: Sequence[ShapeRecord], regressor: MobilityRegressor, config: RunConfig
) -> list[MobilityEval]:
    """Regressor scores on ground-truth maps and segmentation.

    The counterpart to the pipeline numbers: the same head fed clean maps,
    recorded separately because training uses ground truth while the
    pipeline evaluates on predictions.
    """
    out = []
    for rec in records:
        if rec.specs is None:
            continue
        seq = rec.sequence
        inst = make_instances(seq, rec.shape_id)[0]
        plan = build_plan(inst.points, config.net)
        for part_id, spec in enumerate(rec.specs, start=1):
            member = np.flatnonzero(rec.labels == part_id)
            channels = MobilityRegressor.component_channels(inst.points, inst.targets, member)
            tau, d, x = regressor.predict(plan, channels)
            pred = _compose_spec(tau, d, x, inst.targets[:, member], None)
            out.append(evaluate_mobility(pred, spec))
    return out


# ---------------------------------------------------------------------------
# behavior probes used by the CLI and the acceptance suite


def end_state_stop_fraction(records: Sequence[ShapeRecord], pipeline: Pipeline) -> float:
    """Fraction of final frames whose predicted motion stays under theta_stop."""
    if not records:
        raise DataError("no end-state frames to check")
    hits = sum(
        pipeline.predict(rec.frames[-1]).mean_step < pipeline.config.theta_stop
        for rec in records
    )
    return hits / len(records)


def mean_displacement_error(records: Sequence[ShapeRecord], pipeline: Pipeline) -> float:
    """Mean per-point displacement error per frame from start-state inputs."""
    if not records:
        raise DataError("no shapes to check")
    per_shape = []
    for rec in records:
        pred = pipeline.predict(rec.frames[0])
        targets = make_instances(rec.sequence, rec.shape_id)[0].targets
        per_shape.append(float(np.linalg.norm(pred.maps - targets, axis=2).mean()))
    return float(np.mean(per_shape))


def segmentation_accuracy(pred_labels: np.ndarray, gt_labels: np.ndarray) -> float:
    """Per-point accuracy of the moving-vs-reference split."""
    return float(np.mean((np.asarray(pred_labels) > 0) == (np.asarray(gt_labels) > 0)))
