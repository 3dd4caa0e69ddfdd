"""
Explanations for generator and classifier: attention enrichment on the author tag and
integrated-gradients attributions.
"""

from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch

from app.core.exceptions import EmptyQuerySetError, NumericalFailureError
from app.schemas import (
    AttributionMatrix,
    EnrichmentProfile,
    LayerEnrichment,
    RawGeneration,
    SentenceRecord,
    TagSpan,
    TokenRankEntry,
    TokenRanking,
)
from app.services.backend import ForwardTrace, ModelHandle, forward, target_gradients

logger = structlog.get_logger(__name__)

DEFAULT_STEPS = 64
DEFAULT_TOP_K = 20

# points [k, ...] -> (values [k], gradients [k, ...])
GradientFn = Callable[[torch.Tensor], Tuple[torch.Tensor, torch.Tensor]]
# logits [k, ...] -> one scalar per row [k]
Target = Callable[[torch.Tensor], torch.Tensor]


# Attention enrichment


def find_tag_span(token_ids: Sequence[int], tag_ids: Sequence[int]) -> TagSpan:
    """First occurrence of the tag's token ids inside a sequence."""
    n = len(tag_ids)
    ids = list(token_ids)
    for start in range(len(ids) - n + 1):
        if ids[start: start + n] == list(tag_ids):
            return TagSpan(start=start, end=start + n)
    raise ValueError("tag does not occur in the sequence")


def to_tag_mass(attn: np.ndarray, span: TagSpan, T: Optional[int] = None) -> float:
    """
    Mean over heads and over queries after the span of the attention given to the span.

    Args:
        attn: One layer's attention probabilities [heads, T, T]
        span: Tag position
        T: Valid tokens (defaults to the attention width)

    Raises:
        EmptyQuerySetError: no query position follows the span
    """
    T = attn.shape[-1] if T is None else T
    if span.end > T:
        raise ValueError(f"tag span ends at {span.end} beyond T={T}")
    if span.end >= T:
        raise EmptyQuerySetError(span_end=span.end, T=T)
    block = np.asarray(attn, dtype=np.float64)[:, span.end:T, span.start:span.end]
    return float(block.sum(axis=-1).mean())


def enrichment_profile(trace: ForwardTrace, span: TagSpan, tag: Optional[str] = None) -> EnrichmentProfile:
    """To-tag mass of every layer and its ratio to the chance level ``tag_len / T``."""
    if trace.attentions is None:
        raise ValueError("trace carries no attentions")
    T = trace.T
    chance = span.tag_len / T
    layers = []
    for layer, attn in enumerate(trace.attentions):
        mass = to_tag_mass(attn, span, T)
        layers.append(LayerEnrichment(layer=layer, to_tag_mass=mass, enrichment=mass / chance))
    return EnrichmentProfile(layers=layers, T=float(T), tag_len=span.tag_len, tag=tag)


def step_traces(trace: ForwardTrace, start: int) -> List[ForwardTrace]:
    """
    Traces of every generation step, cut from one full-sequence trace.

    Step ``n`` (``start <= n < T``) sees the first ``n`` tokens and predicts token ``n``.
    Under causal masking its attention equals the top-left ``n x n`` block of the full
    pass.
    """
    if trace.attentions is None:
        raise ValueError("trace carries no attentions")
    steps = []
    for n in range(max(start, 1), trace.T):
        steps.append(
            ForwardTrace(
                token_ids=trace.token_ids[:n],
                T=n,
                attentions=trace.attentions[:, :, :n, :n],
            )
        )
    return steps


def average_profiles(profiles: Sequence[EnrichmentProfile]) -> EnrichmentProfile:
    """
    Equal-weight mean of profiles with the same depth and tag length.

    Mass and ``T`` are averaged; enrichment is recomputed from the averages so the
    result keeps ``enrichment == to_tag_mass * T / tag_len`` on every layer.
    """
    if not profiles:
        raise EmptyQuerySetError(reason="no profiles to average")
    depth = len(profiles[0].layers)
    tag_len = profiles[0].tag_len
    if any(len(p.layers) != depth or p.tag_len != tag_len for p in profiles):
        raise ValueError("profiles differ in depth or tag length")
    mass = np.mean([[entry.to_tag_mass for entry in p.layers] for p in profiles], axis=0)
    T = float(np.mean([p.T for p in profiles]))
    return EnrichmentProfile(
        layers=[
            LayerEnrichment(layer=i, to_tag_mass=float(mass[i]), enrichment=float(mass[i]) * T / tag_len)
            for i in range(depth)
        ],
        T=T,
        tag_len=tag_len,
        sample_size=sum(p.sample_size for p in profiles),
        tag=profiles[0].tag,
    )


def generation_profile(handle: ModelHandle, generation: RawGeneration) -> EnrichmentProfile:
    """Enrichment of the seed's author tag averaged over the steps of one generation."""
    scheme = handle.scheme
    if scheme is None:
        raise ValueError("model handle carries no tag scheme")
    tag = scheme.tag_for(generation.seed.author)
    span = find_tag_span(generation.token_ids, handle.tokenizer.encode(tag))
    trace = generation.trace if generation.trace is not None else forward(handle, generation.token_ids, ("attentions",))
    profiles = [
        enrichment_profile(step, span, tag)
        for step in step_traces(trace, generation.prompt_len)
        if step.T > span.end
    ]
    averaged = average_profiles(profiles)
    averaged.sample_size = 1
    return averaged


# Integrated gradients


def integrate_path(
    fn: GradientFn,
    inputs: torch.Tensor,
    baseline: torch.Tensor,
    steps: int = DEFAULT_STEPS,
    batch_size: int = 16,
) -> torch.Tensor:
    """
    Midpoint Riemann sum of the gradient along the straight path from baseline to
    inputs, scaled by ``inputs - baseline``.

    Raises:
        NumericalFailureError: a gradient was not finite; carries the offending alpha
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    diff = inputs - baseline
    alphas = (torch.arange(steps, dtype=torch.float64) + 0.5) / steps
    total = torch.zeros_like(inputs)
    for start in range(0, steps, batch_size):
        chunk = alphas[start: start + batch_size]
        shape = (len(chunk),) + (1,) * inputs.dim()
        points = baseline[None] + chunk.to(inputs.dtype).to(inputs.device).view(shape) * diff[None]
        _, grads = fn(points)
        finite = torch.isfinite(grads.reshape(len(chunk), -1)).all(dim=1)
        if not bool(finite.all()):
            bad = int((~finite).nonzero()[0].item())
            raise NumericalFailureError(alpha=float(chunk[bad].item()))
        total += grads.sum(dim=0)
    return diff * (total / steps)


def model_gradient_fn(handle: ModelHandle, target: Target) -> GradientFn:
    return lambda points: target_gradients(handle, points, target)


def next_token_logprob(position: int, token_id: int) -> Target:
    """Log-probability of ``token_id`` at ``position`` of causal LM logits [k, T, V]."""
    return lambda logits: torch.log_softmax(logits[:, position].double(), dim=-1)[:, token_id]


def class_logit(label: int) -> Target:
    return lambda logits: logits[:, label]


def zero_baseline(embeds: torch.Tensor, positions: Optional[Sequence[int]] = None) -> torch.Tensor:
    """Copy of ``embeds`` with the given positions (default all) set to zero."""
    baseline = embeds.detach().clone()
    if positions is None:
        baseline.zero_()
    else:
        baseline[list(positions)] = 0.0
    return baseline


def integrated_gradients(
    handle: ModelHandle,
    token_ids: Sequence[int],
    target: Target,
    steps: int = DEFAULT_STEPS,
    baseline_positions: Optional[Sequence[int]] = None,
    batch_size: int = 16,
) -> Tuple[np.ndarray, float]:
    """
    Attribution of a scalar target to every token-embedding dimension.

    The baseline zeroes the token embeddings at ``baseline_positions`` (all positions
    when None); other positions and all positional embeddings keep their values.

    Args:
        handle: Model to explain
        token_ids: Input sequence
        target: Scalar function of the logits
        steps: Midpoint evaluations along the path
        baseline_positions: Positions replaced by zero vectors
        batch_size: Path points per forward pass

    Returns:
        (attributions [T, C], target(input) - target(baseline))
    """
    embeds = handle.embed(token_ids).detach()
    baseline = zero_baseline(embeds, baseline_positions)
    fn = model_gradient_fn(handle, target)
    ig = integrate_path(fn, embeds, baseline, steps, batch_size)
    values, _ = fn(torch.stack([embeds, baseline]))
    delta = float(values[0].item() - values[1].item())
    return ig.detach().double().cpu().numpy(), delta


def token_attributions(ig: np.ndarray, start: int = 0, end: Optional[int] = None) -> np.ndarray:
    """L2 norm over embedding dimensions for positions ``start..end``."""
    return np.linalg.norm(np.asarray(ig)[start:end], axis=1)


def completeness_gap(ig: np.ndarray, delta: float) -> float:
    return abs(float(np.sum(ig)) - delta)


def tag_attribution_heatmap(
    handle: ModelHandle,
    generation: RawGeneration,
    steps: int = DEFAULT_STEPS,
    batch_size: int = 16,
) -> AttributionMatrix:
    """
    Importance of each prompt token for each generated token.

    Column ``j`` explains the log-probability of generated token ``j`` at the step it
    was produced, with a baseline that zeroes the prompt embeddings.
    """
    ids = list(generation.token_ids)
    prompt_len = generation.prompt_len
    if len(ids) <= prompt_len:
        raise ValueError("generation has no generated tokens")
    prompt_positions = list(range(prompt_len))
    columns: List[np.ndarray] = []
    gaps: List[float] = []
    for position in range(prompt_len, len(ids)):
        ig, delta = integrated_gradients(
            handle,
            ids[:position],
            next_token_logprob(position - 1, ids[position]),
            steps,
            prompt_positions,
            batch_size,
        )
        columns.append(token_attributions(ig, 0, prompt_len))
        gaps.append(completeness_gap(ig, delta))
    matrix = np.stack(columns, axis=1)
    display = handle.tokenizer.display_tokens(ids)
    return AttributionMatrix(
        A=matrix.tolist(),
        prompt_tokens=display[:prompt_len],
        generated_tokens=display[prompt_len:],
        steps=steps,
        completeness_gap=gaps,
        author=generation.seed.author,
    )


def classifier_token_ranking(
    detector: ModelHandle,
    records: Sequence[SentenceRecord],
    author: int,
    steps: int = DEFAULT_STEPS,
    top_k: int = DEFAULT_TOP_K,
    batch_size: int = 16,
) -> TokenRanking:
    """
    Tokens that push the classifier toward one author, aggregated over sentences.

    Per sentence the signed sum over embedding dimensions gives a token's direction and
    its L2 norm its magnitude; repeated tokens inside a sentence are averaged first.
    Entries are ranked by the absolute mean signed attribution; ``support`` counts the
    sentences a token occurs in.
    """
    if not records:
        raise ValueError("no sentences to rank tokens over")
    signed: Dict[str, List[float]] = defaultdict(list)
    magnitude: Dict[str, List[float]] = defaultdict(list)
    for record in records:
        ids = detector.tokenizer.encode(record.text)[: detector.context]
        if not ids:
            continue
        ig, _ = integrated_gradients(detector, ids, class_logit(author), steps, None, batch_size)
        sums = ig.sum(axis=1)
        norms = token_attributions(ig)
        per_sentence: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
        for piece, s, m in zip(detector.tokenizer.display_tokens(ids), sums, norms):
            token = piece.strip() or piece
            per_sentence[token].append((float(s), float(m)))
        for token, values in per_sentence.items():
            signed[token].append(float(np.mean([v[0] for v in values])))
            magnitude[token].append(float(np.mean([v[1] for v in values])))

    entries = [
        TokenRankEntry(
            token=token,
            mean_attribution=float(np.mean(signed[token])),
            mean_magnitude=float(np.mean(magnitude[token])),
            support=len(signed[token]),
        )
        for token in signed
    ]
    entries.sort(key=lambda e: (-abs(e.mean_attribution), e.token))
    logger.info("Token ranking computed", author=author, sentences=len(records), tokens=len(entries))
    return TokenRanking(author=author, entries=entries[:top_k], sentences=len(records))
