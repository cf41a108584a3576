"""The tagged audit grammar: rendering, parsing with recovery, target hints."""

import math
import re
from typing import Optional

from models import Action, AuditPrediction, MaskType, ParseStatus

# IoU assumed when a recovered record names a type but no IoU.
IMPUTED_IOU = {
    MaskType.PERFECT: 1.0,
    MaskType.FULL_NEG: 0.0,
    MaskType.CUTOUT: 0.825,
    MaskType.DILATE: 0.825,
    MaskType.ERODE: 0.825,
    MaskType.MERGE: 0.8,
}

DEFAULT_TARGET = "target object"
DEFAULT_NEGATIVE = "neighbouring object"

_REASONING_TEMPLATES: dict[tuple[MaskType, Action], str] = {
    (MaskType.PERFECT, Action.ACCEPT): "The mask follows the {target} closely and its outline needs no edits.",
    (MaskType.FULL_NEG, Action.REJECT): (
        "The mask covers the {negative} and shares no pixels with the {target}."
    ),
    (MaskType.CUTOUT, Action.MINOR_REVISION): (
        "The mask outlines the {target} but a small region inside the object is missing."
    ),
    (MaskType.CUTOUT, Action.MAJOR_REVISION): (
        "The mask outlines the {target} but a large internal hole removes much of the object."
    ),
    (MaskType.DILATE, Action.MINOR_REVISION): (
        "The mask covers the {target} and spills slightly past its outline into the background."
    ),
    (MaskType.DILATE, Action.MAJOR_REVISION): (
        "The mask covers the {target} but its outline is pushed far out into the background."
    ),
    (MaskType.ERODE, Action.MINOR_REVISION): (
        "The mask stays inside the {target} and loses a thin band along its edge."
    ),
    (MaskType.ERODE, Action.MAJOR_REVISION): (
        "The mask stays inside the {target} but has shrunk well away from its true edge."
    ),
    (MaskType.MERGE, Action.MINOR_REVISION): (
        "The mask covers the {target} and also picks up a small {negative}."
    ),
    (MaskType.MERGE, Action.MAJOR_REVISION): (
        "The mask covers the {target} and also absorbs a sizeable {negative}."
    ),
    (MaskType.MERGE, Action.REJECT): (
        "The mask covers the {target} but is dominated by a much larger {negative}."
    ),
}

_BLOCK_EXACT = re.compile(r"<audit>(.*?)</audit>", re.S)
_BLOCK_LOOSE = re.compile(r"<\s*audit\s*>(.*?)<\s*/\s*audit\s*>", re.S | re.I)
_SENTENCE = re.compile(r"the\s+iou\s+with\s+gt\s+is", re.I)
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?\s*%?")
_STRICT_NUMBER = re.compile(r"\d+(?:\.\d+)?")
_LOOSE_IOU = re.compile(r"\biou\b[^0-9+\-.<>]{0,24}([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?\s*%?)", re.I)
_LOOSE_TYPE = re.compile(r"mask[\s_-]*type\s*(?:belongs\s+to|is|:|=)?\s*([A-Za-z][A-Za-z_\- ]{2,24})", re.I)
_LOOSE_ACTION = re.compile(r"\baction\s*(?:is|:|=)?\s*([A-Za-z][A-Za-z_\- ]{2,24})", re.I)
_ANY_TAG = re.compile(r"<\s*/?\s*[A-Za-z_]+\s*>")
_TARGET_HINT = re.compile(r"\btarget\s*:\s*([^.<\n]+)", re.I)

_TYPE_ALIASES = (
    ("full_negative", MaskType.FULL_NEG),
    ("full_neg", MaskType.FULL_NEG),
    ("fullneg", MaskType.FULL_NEG),
    ("perfect", MaskType.PERFECT),
    ("cut_out", MaskType.CUTOUT),
    ("cutout", MaskType.CUTOUT),
    ("dilat", MaskType.DILATE),
    ("erod", MaskType.ERODE),
    ("erosion", MaskType.ERODE),
    ("merg", MaskType.MERGE),
)


def _exact_tag(name: str) -> re.Pattern:
    return re.compile(rf"<{name}>(.*?)</{name}>", re.S)


def _loose_tag(name: str) -> re.Pattern:
    return re.compile(rf"<\s*{name}\s*>(.*?)<\s*/\s*{name}\s*>", re.S | re.I)


_EXACT_TAGS = {name: _exact_tag(name) for name in ("iou", "mask_type", "action")}
_LOOSE_TAGS = {name: _loose_tag(name) for name in ("iou", "mask_type", "action")}


def render_reasoning(
    mask_type: MaskType, action: Action, target: Optional[str] = None, negative: Optional[str] = None
) -> str:
    """Template reasoning for a (type, action) pair; adds a ``target:`` hint when given."""
    template = _REASONING_TEMPLATES.get((mask_type, action))
    if template is None:
        template = "The mask of the {target} has " + mask_type.value.replace("_", " ") + " errors."
    text = template.format(target=target or DEFAULT_TARGET, negative=negative or DEFAULT_NEGATIVE)
    if target:
        text = f"{text} target: {target}."
    return text


def serialize_audit(
    iou: float,
    mask_type: MaskType,
    action: Action,
    reasoning: Optional[str] = None,
    target: Optional[str] = None,
    negative: Optional[str] = None,
) -> str:
    """Render one audit block; IoU to four decimals."""
    if not 0.0 <= iou <= 1.0:
        raise ValueError(f"iou {iou} outside [0, 1]")
    if reasoning is None:
        reasoning = render_reasoning(mask_type, action, target, negative)
    return (
        f"<audit> {reasoning} The IoU with GT is <iou> {iou:.4f} </iou>, "
        f"its mask type belongs to <mask_type> {mask_type.value} </mask_type>, "
        f"and the recommend action is <action> {action.display} </action> </audit>"
    )


def normalize_mask_type(value: str) -> Optional[MaskType]:
    key = re.sub(r"[\s\-]+", "_", value.strip().lower())
    for alias, mask_type in _TYPE_ALIASES:
        if key.startswith(alias):
            return mask_type
    return None


def normalize_action(value: str) -> Optional[Action]:
    key = value.strip().lower()
    if key.startswith("accept"):
        return Action.ACCEPT
    if key.startswith("reject"):
        return Action.REJECT
    if key.startswith("minor"):
        return Action.MINOR_REVISION
    if key.startswith("major"):
        return Action.MAJOR_REVISION
    return None


def _to_iou(token: str) -> Optional[float]:
    token = token.strip()
    percent = token.endswith("%")
    try:
        value = float(token.rstrip("%").strip())
    except ValueError:
        return None
    if math.isnan(value):
        return None
    if percent:
        value /= 100.0
    return min(1.0, max(0.0, value))


def _reasoning_of(scope: str) -> str:
    sentence = _SENTENCE.search(scope)
    head = scope[: sentence.start()] if sentence else scope
    return " ".join(_ANY_TAG.sub(" ", head).split())


def extract_target_hint(prediction: AuditPrediction) -> Optional[str]:
    """Sidecar target if set, otherwise the ``target:`` phrase of the reasoning."""
    if prediction.target:
        return prediction.target
    for text in (prediction.reasoning, prediction.raw_text):
        match = _TARGET_HINT.search(text or "")
        if match:
            hint = match.group(1).strip()
            if hint:
                return hint
    return None


def _parse_clean(text: str) -> Optional[AuditPrediction]:
    blocks = _BLOCK_EXACT.findall(text)
    if len(blocks) != 1:
        return None
    block = blocks[0]
    values = {}
    for name, pattern in _EXACT_TAGS.items():
        found = pattern.findall(block)
        if len(found) != 1:
            return None
        values[name] = found[0].strip()
    if not _STRICT_NUMBER.fullmatch(values["iou"]):
        return None
    iou = float(values["iou"])
    if not 0.0 <= iou <= 1.0:
        return None
    try:
        mask_type = MaskType(values["mask_type"])
    except ValueError:
        return None
    action = next((a for a in Action if a.display == values["action"]), None)
    if action is None:
        return None
    prediction = AuditPrediction(
        raw_text=text,
        iou=iou,
        mask_type=mask_type,
        action=action,
        reasoning=_reasoning_of(block),
        parse_status=ParseStatus.CLEAN,
    )
    prediction.target = extract_target_hint(prediction)
    return prediction


def _parse_recovered(text: str) -> AuditPrediction:
    blocks = _BLOCK_LOOSE.findall(text)
    scope = blocks[-1] if blocks else text

    iou: Optional[float] = None
    found = _LOOSE_TAGS["iou"].findall(scope)
    if found:
        number = _NUMBER.search(found[-1])
        iou = _to_iou(number.group(0)) if number else None
    if iou is None:
        loose = _LOOSE_IOU.findall(scope)
        iou = _to_iou(loose[-1]) if loose else None

    mask_type: Optional[MaskType] = None
    found = _LOOSE_TAGS["mask_type"].findall(scope)
    if found:
        mask_type = normalize_mask_type(found[-1])
    if mask_type is None:
        for candidate in reversed(_LOOSE_TYPE.findall(scope)):
            mask_type = normalize_mask_type(candidate)
            if mask_type is not None:
                break

    action: Optional[Action] = None
    found = _LOOSE_TAGS["action"].findall(scope)
    if found:
        action = normalize_action(found[-1])
    if action is None:
        for candidate in reversed(_LOOSE_ACTION.findall(scope)):
            action = normalize_action(candidate)
            if action is not None:
                break

    if mask_type is None and action is None:
        return AuditPrediction(raw_text=text, parse_status=ParseStatus.FAILED)
    if iou is None and mask_type is not None:
        iou = IMPUTED_IOU[mask_type]

    prediction = AuditPrediction(
        raw_text=text,
        iou=iou,
        mask_type=mask_type,
        action=action,
        reasoning=_reasoning_of(scope),
        parse_status=ParseStatus.RECOVERED,
    )
    prediction.target = extract_target_hint(prediction)
    return prediction


def parse_audit(text: str) -> AuditPrediction:
    """Parse arbitrary auditor output; never raises."""
    if not isinstance(text, str):
        text = "" if text is None else str(text)
    try:
        clean = _parse_clean(text)
        if clean is not None:
            return clean
        return _parse_recovered(text)
    except (ValueError, OverflowError, RecursionError):
        return AuditPrediction(raw_text=text, parse_status=ParseStatus.FAILED)
