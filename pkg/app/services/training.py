"""
Mini-batch training loop shared by generator fine-tuning and detector training.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import ContextOverflowError, DivergenceError
from app.schemas import Objective, TrainingHyper, TrainingReport
from app.services.backend import ModelHandle, make_batch, make_optimizer, train_step

logger = structlog.get_logger(__name__)

# (epoch index, mean train loss) -> False to stop
EpochCallback = Callable[[int, float], bool]


def encode_for_training(
    handle: ModelHandle, texts: Sequence[str]
) -> Tuple[List[List[int]], int]:
    """Encode texts and cut them to the model context; returns (sequences, truncated)."""
    sequences = []
    truncated = 0
    for text in texts:
        ids = handle.tokenizer.encode(text)
        if len(ids) > handle.context:
            ids = ids[: handle.context]
            truncated += 1
        sequences.append(ids)
    if truncated:
        logger.warning("Training strings truncated to context", truncated=truncated, context=handle.context)
    return sequences, truncated


def fit(
    handle: ModelHandle,
    sequences: Sequence[Sequence[int]],
    hyper: TrainingHyper,
    objective: Objective,
    labels: Optional[Sequence[int]] = None,
    epochs: Optional[int] = None,
    method: Optional[str] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainingReport:
    """
    Train a handle in place.

    Args:
        handle: Model whose trainable parameters are updated
        sequences: Token id lists, each within the context
        hyper: Batch size, learning rate, seed and step limits
        objective: ``next_token`` or ``class_label``
        labels: Class per sequence for ``class_label``
        epochs: Overrides ``hyper.epochs``
        method: Label stored in the report (defaults to the handle's method)
        on_epoch: Called after every epoch; returning False stops training

    Returns:
        Training report with per-step and per-epoch losses

    Raises:
        DivergenceError: a loss was not finite; ``report`` holds progress so far
    """
    if not sequences:
        raise ValueError("nothing to train on")
    if max(len(s) for s in sequences) > handle.context:
        raise ContextOverflowError(length=max(len(s) for s in sequences), context=handle.context)

    epochs = epochs if epochs is not None else hyper.epochs
    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    optimizer = make_optimizer(handle, hyper)
    report = TrainingReport(
        method=method or handle.method,
        objective=objective,
        parameter_count=handle.parameter_count,
        trainable_parameter_count=handle.trainable_parameter_count,
    )
    logger.info(
        "Training started",
        method=report.method,
        objective=objective,
        examples=len(sequences),
        epochs=epochs,
        trainable=report.trainable_parameter_count,
        total=report.parameter_count,
    )

    steps = 0
    limit_hit = False
    for epoch in range(epochs):
        order = rng.permutation(len(sequences))
        epoch_losses = []
        starts = range(0, len(order), hyper.batch_size)
        for start in tqdm(starts, desc=f"epoch {epoch + 1}", disable=not settings.SHOW_PROGRESS):
            idx = order[start: start + hyper.batch_size]
            batch = make_batch(
                [sequences[i] for i in idx],
                pad_id=handle.tokenizer.pad_id,
                labels=[labels[i] for i in idx] if labels is not None else None,
                device=handle.device,
            )
            try:
                loss = train_step(handle, batch, objective, optimizer, hyper.max_grad_norm, hyper.label_smoothing)
            except DivergenceError as exc:
                report.diverged = True
                report.steps = steps
                exc.report = report
                logger.error("Training diverged", step=steps, epoch=epoch + 1)
                raise
            epoch_losses.append(loss)
            report.loss_curve.append(loss)
            steps += 1
            if steps % hyper.log_every == 0:
                logger.debug("Training step", step=steps, loss=round(loss, 4))
            if hyper.max_steps is not None and steps >= hyper.max_steps:
                limit_hit = True
                break

        mean_loss = float(np.mean(epoch_losses))
        report.epoch_losses.append(mean_loss)
        report.epochs = epoch + 1
        report.steps = steps
        logger.info("Epoch finished", epoch=epoch + 1, loss=round(mean_loss, 4), steps=steps)
        if on_epoch is not None and on_epoch(epoch, mean_loss) is False:
            break
        if limit_hit:
            break

    handle.module.eval()
    return report
