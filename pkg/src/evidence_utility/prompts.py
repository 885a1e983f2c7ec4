"""Prompt template registry and rendering.

Placeholders are literal tokens replaced verbatim (no ``str.format``), so
braces that belong to the prompt text, such as ``{answer_text}``, survive:

    {QUESTION}           query text
    {CHOICES}            "(A) ..." lines, one per option
    {OPTION_A}..{OPTION_D}
    {Image_placeholder}  one "<image>" token per attached image

With ``strip_image_placeholders`` the line holding ``{Image_placeholder}``
is removed, together with one adjacent blank line, for models that reject
inline image tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

from .payloads import check_payload_ref
from .pools import Candidate, Query

IMAGE_TOKEN = "<image>"
OPTION_LETTERS = "ABCDEFGH"
DEFAULT_LABELS = ("True", "False")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    id: str
    benchmark: str
    kind: str  # "probe" or "answer"
    text: str
    label_space: tuple[str, str] = DEFAULT_LABELS
    aux_question: str = ""
    multi_evidence: bool = False


@dataclass(frozen=True)
class PromptInstance:
    """A rendered prompt plus the evidence it refers to, in message order."""

    query_text: str
    evidence_refs: tuple[str, ...]
    aux_question: str
    choices: tuple[str, ...] | None
    label_space: tuple[str, str]
    text: str = ""
    template_id: str = ""
    kind: str = "probe"
    query_id: str = ""
    candidate_ids: tuple[str, ...] = ()

    def __post_init__(self):
        pos, neg = self.label_space
        if not pos or not neg or pos == neg:
            raise TemplateError(f"invalid label space {self.label_space!r}")
        if self.kind == "probe" and not self.evidence_refs:
            raise TemplateError("probe prompts need at least one evidence reference")


_MRAG_AUX = """\
You will be given two images and a multiple-choice question.
- The first image is the input image that the question is about.
- The second image is a retrieved image intended to provide additional visual evidence.
The retrieved image does not need to answer the question by itself. It is only meant to help answer the question together with the input image.

Question:
{QUESTION}

Choices:
{CHOICES}

Based on the images provided, does the retrieved image provide helpful visual or factual information that could assist in answering the question correctly?

Answer with True or False."""

_VRAG_AUX = """\
You will be given one image and a question about a visual attribute of an organism.

The image is retrieved as potential visual evidence. Not all retrieved images contain the information needed to answer the question.

Question:
{QUESTION}

Based on the image provided, does this image contain the key visual information needed to answer the question?

Answer with True or False."""

_MRAG_AUX_V1 = """\
You are shown two images and a multiple-choice question.

- Image A: the original image referenced by the question.
- Image B: an image retrieved as supporting evidence.

The retrieved image may or may not add information that changes the answer.

Question:
{QUESTION}

Options:
{CHOICES}

Does Image B supply additional visual or factual cues that would help resolve the question correctly?

Respond with True or False."""

_MRAG_AUX_V2 = """\
You will be given two images and a multiple-choice question.
- The first image is the input image that the question is about.
- The second image is a retrieved image intended to provide additional visual evidence.

The retrieved image does not need to answer the question by itself.
It is only meant to help answer the question together with the input image.

Question:
{QUESTION}

Choices:
{CHOICES}

Based on the images provided, does the retrieved image provide useful visual or factual information that could assist in answering the question correctly?

Answer with True or False."""

_MRAG_AUX_V3 = """\
You are shown two images and a multiple-choice question.
- Image A: the original image referenced by the question.
- Image B: an image retrieved as supporting evidence.

The retrieved image may or may not add information that changes the answer.
Question:
{QUESTION}
Options:
{CHOICES}
Does the retrieved image provide useful evidence to aid answering the question?
Answer with "Yes" or "No"."""

_VRAG_AUX_V1 = """\
You are shown one image and a question about a visual trait of an organism.

The image is a retrieved candidate; it might or might not show the necessary detail.

Question:
{QUESTION}

Does the provided image include the critical visual detail required to answer the question?

Respond with True or False."""

_VRAG_AUX_V2 = """\
You will be given one image and a question about a visual attribute of an organism.

The image is retrieved as potential visual evidence.
Not all retrieved images contain the information needed to answer the question.

Question:
{QUESTION}

Based on the image provided, does this image contain useful visual information needed to answer the question?

Answer with True or False."""

_VRAG_AUX_V3 = """\
You are shown one image and a question about a visual trait of an organism.

The image is a retrieved candidate; it might or might not show the necessary detail.

Question:
{QUESTION}

Please indicate whether this retrieved image is Helpful or Not helpful for answering the question.

Answer with "Helpful" or "Not helpful"."""

_MRAG_CHOICE_BLOCK = """\
Question: {QUESTION}

Choices:

(A) {OPTION_A}

(B) {OPTION_B}

(C) {OPTION_C}

(D) {OPTION_D}

Answer:"""

_MRAG_NORAG = (
    "Instruction: Answer with the option's letter from the given choices directly.\n\n"
    "{Image_placeholder}\n\n" + _MRAG_CHOICE_BLOCK
)

_MRAG_RAG = (
    "Instruction: You will be given one question concerning several images. The first image "
    "is the input image; the remaining images are retrieved examples to help you. Answer with "
    "the option's letter from the given choices directly.\n\n"
    "{Image_placeholder}\n\n" + _MRAG_CHOICE_BLOCK
)

_VRAG_PREAMBLE = (
    "Please answer the question regarding a visual feature of an organism (animal, plant, etc.)."
)
_VRAG_FORMAT = 'Please follow the answer format: "Answer: {answer_text}"'

_VRAG_ZERO_SHOT = f"""\
{_VRAG_PREAMBLE} {_VRAG_FORMAT}

Question:
{{QUESTION}}"""

_VRAG_SINGLE = f"""\
{_VRAG_PREAMBLE} You will be provided with an image regarding that organism. If this image does not contain the key information for answering the question, please answer using your internal knowledge. {_VRAG_FORMAT}

Image(s): {{Image_placeholder}}

Question:
{{QUESTION}}"""

_VRAG_MULTI = f"""\
{_VRAG_PREAMBLE} You will be provided with several images; all of them relate to the organism, but not every image necessarily contains the key information for answering the question. If none of the images contains the key information, please answer using your internal knowledge. {_VRAG_FORMAT}

Image(s): {{Image_placeholder}}

Question:
{{QUESTION}}"""

_VRAG_JUDGE = """\
Please evaluate the answer to a question, score from 0 to 1. The reference answer is provided, and the reference is usually short phrases or a single keyword. If the student answer is containing the keywords or similar expressions (including similar or close color/pattern), without any additional guessed information, it is full correct. Similar or close color/pattern includes but not limited to the following cases: pale or light color can appear to be yellowish/greyish under different light condition; dark colors like dark brown, dark grey, dark purple can appear close to each other, and may appear as black as well; stripe pattern can appear as band or ring, dotted pattern can etc. If the student answer have missed some important part in the reference answer, please assign partial score. The reference answer can be in the form of a Python list, in this case, any one of the list item is correct.
If student answer contain irrelevant information not related to question, mark it with "Redundant", but it does not affect score if related parts are correct. (e.g. Question: what shape are leaves of XYZ plant, Student Answer: shape xxx, color yyy, color is Redundant answer) If student answer contain features not listed in reference answer, deduct 0.5 score and mark it with "Likely Hallucination". (e.g., Reference Answer: black and white. Student Answer: black white, with yellow dots, "Yellow dots" is not mentioned in reference). The reference answer sometimes contains additional information not asked in question, usually enclosed by brackets (), to help verifying hallucinations (e.g.: "Shape is xxx (color is yyy)"). Not mentioning additional information in answer is not considered wrong. For yes/no question, reference may contain explanations on why giving yes/no, but it is not necessary for student to answer the explanation; however, if student explains and differs with reference, it is considered as hallucination. Answering "I don’t know", "Not enough information" or similar is considered wrong, and please mark it with "No Answer".

Format Instructions: Separate the remarks with score using "|", that is, use the syntax of: "Score: score | Likely Hallucination", "Score: score", "Score: score | Likely Hallucination | Redundant", "Score: 0 | No Answer". If any explanation on why giving the score is needed, do not start a new line and append after remark with brackets, e.g. "Score: score | Redundant | (Explanation: abc)".

Following are few examples:

Question: Is there any specific color marking around the eyes of a semipalmated plover (scientific name: Charadrius semipalmatus)?
Reference Answer: black eye-round feather, white stripe above eyes. (sometimes connected to the white forehead)

Student Answer: Yes, the bird has a distinctive black line that runs through the eye, which is a key identifying feature.
Score: 0 | Likely Hallucination

Student Answer: They have a black vertical band in front of the eye, a white band above the eye, and a single black band that wraps partially around the eye, creating a partial "mask" appearance.
Score: 1

Student Answer: Yes, the semipalmated plover has a distinctive black/dark ring around its eye, surrounded by a bright white ring or patch
Score: 0.5 | Likely Hallucination (Explanation: not white ring, but only a line above the eye)

Question: What is the typical color of the antennae of Harris’s checkerspot butterfly (scientific name: Chlosyne harrisii)?
Reference Answer: alternating black and white band, with yellow on the tip

Student Answer: The antennae of Harris’s checkerspot butterfly are black with orange-tipped clubs.
Score: 0.5 (Explanation: not mentioning black and white)

Student Answer: The typical color of the antennae of Harris’s checkerspot butterfly is black with white spots.
Score: 0.5 | Likely Hallucination (Explanation: not white spot but band. Not mentioning the tip)

Question: Are the leaves of burro-weed (scientific name: Ambrosia dumosa) usually covered in small hairs?
Reference Answer: yes

Student Answer: Yes, the leaves of burro-weed (Ambrosia dumosa) are typically covered in small hairs, giving them a grayish or whitish-green appearance.
Score: 1 | Redundant

Now, Score the following question:

Image(s): {Image_placeholder}

Question:
{QUESTION}
Reference Answer: {REFERENCE}
Student Answer: {ANSWER}"""


def _aux(tid, bench, text, question, labels=DEFAULT_LABELS):
    return Template(tid, bench, "probe", text, labels, question, multi_evidence=bench == "mragbench")


REGISTRY: dict[str, Template] = {
    t.id: t
    for t in (
        _aux(
            "mragbench_aux", "mragbench", _MRAG_AUX,
            "Based on the images provided, does the retrieved image provide helpful visual or "
            "factual information that could assist in answering the question correctly?",
        ),
        _aux(
            "mragbench_aux_v1", "mragbench", _MRAG_AUX_V1,
            "Does Image B supply additional visual or factual cues that would help resolve the "
            "question correctly?",
        ),
        _aux(
            "mragbench_aux_v2", "mragbench", _MRAG_AUX_V2,
            "Based on the images provided, does the retrieved image provide useful visual or "
            "factual information that could assist in answering the question correctly?",
        ),
        _aux(
            "mragbench_aux_v3", "mragbench", _MRAG_AUX_V3,
            "Does the retrieved image provide useful evidence to aid answering the question?",
            ("Yes", "No"),
        ),
        _aux(
            "visualrag_aux", "visualrag", _VRAG_AUX,
            "Based on the image provided, does this image contain the key visual information "
            "needed to answer the question?",
        ),
        _aux(
            "visualrag_aux_v1", "visualrag", _VRAG_AUX_V1,
            "Does the provided image include the critical visual detail required to answer the "
            "question?",
        ),
        _aux(
            "visualrag_aux_v2", "visualrag", _VRAG_AUX_V2,
            "Based on the image provided, does this image contain useful visual information "
            "needed to answer the question?",
        ),
        _aux(
            "visualrag_aux_v3", "visualrag", _VRAG_AUX_V3,
            "Please indicate whether this retrieved image is Helpful or Not helpful for answering "
            "the question.",
            ("Helpful", "Not helpful"),
        ),
        Template("mragbench_norag", "mragbench", "answer", _MRAG_NORAG),
        Template("mragbench_rag", "mragbench", "answer", _MRAG_RAG, multi_evidence=True),
        Template("visualrag_zero_shot", "visualrag", "answer", _VRAG_ZERO_SHOT),
        Template("visualrag_image_single", "visualrag", "answer", _VRAG_SINGLE),
        Template("visualrag_image_multi", "visualrag", "answer", _VRAG_MULTI, multi_evidence=True),
        Template("visualrag_judge", "visualrag", "judge", _VRAG_JUDGE),
    )
}


def get_template(template_id: str) -> Template:
    try:
        return REGISTRY[template_id]
    except KeyError:
        raise TemplateError(
            f"unknown template {template_id!r}; known: {', '.join(sorted(REGISTRY))}"
        ) from None


def format_choices(choices) -> str:
    return "\n".join(f"({OPTION_LETTERS[i]}) {c}" for i, c in enumerate(choices))


def strip_placeholder_lines(text: str) -> str:
    lines = text.split("\n")
    out: list[str] = []
    skip_blank = False
    for line in lines:
        if "{Image_placeholder}" in line:
            if out and out[-1] == "":
                out.pop()
            else:
                skip_blank = True
            continue
        if skip_blank and line == "":
            skip_blank = False
            continue
        skip_blank = False
        out.append(line)
    return "\n".join(out)


def render(
    template: Template,
    question: str,
    choices=None,
    n_images: int = 0,
    strip_image_placeholders: bool = False,
    extra: dict[str, str] | None = None,
) -> str:
    text = template.text
    if strip_image_placeholders or n_images == 0:
        text = strip_placeholder_lines(text)
    else:
        text = text.replace("{Image_placeholder}", IMAGE_TOKEN * n_images)
    if "{CHOICES}" in text:
        text = text.replace("{CHOICES}", format_choices(choices or ()))
    if "{OPTION_A}" in text:
        for letter, choice in zip("ABCD", choices):
            text = text.replace("{OPTION_%s}" % letter, choice)
    for key, value in (extra or {}).items():
        text = text.replace("{%s}" % key, value)
    return text.replace("{QUESTION}", question)


def _needs_choices(template: Template) -> int:
    if "{OPTION_A}" in template.text:
        return 4
    if "{CHOICES}" in template.text:
        return 2
    return 0


def _check_choices(template: Template, query: Query) -> None:
    needed = _needs_choices(template)
    if not needed:
        return
    n = len(query.choices or ())
    if needed == 4 and n != 4:
        raise TemplateError(f"template {template.id!r} needs exactly 4 choices, got {n}")
    if n < needed:
        raise TemplateError(f"template {template.id!r} needs answer choices, got {n}")


def build_aux_prompt(query: Query, candidate: Candidate, template_id: str) -> PromptInstance:
    """Helpfulness probe for one candidate.

    Two-image templates send the query image first and the candidate second;
    single-image templates send only the candidate.
    """
    template = get_template(template_id)
    if template.kind != "probe":
        raise TemplateError(f"template {template_id!r} is not a helpfulness probe")
    _check_choices(template, query)
    check_payload_ref(candidate.payload_ref)
    if template.multi_evidence:
        if not query.image_ref:
            raise TemplateError(f"template {template_id!r} needs the query image")
        check_payload_ref(query.image_ref)
        refs = (query.image_ref, candidate.payload_ref)
    else:
        refs = (candidate.payload_ref,)
    text = render(template, query.text, query.choices)
    return PromptInstance(
        query_text=query.text,
        evidence_refs=refs,
        aux_question=template.aux_question,
        choices=query.choices,
        label_space=template.label_space,
        text=text,
        template_id=template.id,
        kind="probe",
        query_id=query.query_id,
        candidate_ids=(candidate.id,),
    )


def answer_template_for(benchmark: str, n_evidence: int) -> str:
    if benchmark == "mragbench":
        return "mragbench_rag" if n_evidence else "mragbench_norag"
    if n_evidence == 0:
        return "visualrag_zero_shot"
    return "visualrag_image_single" if n_evidence == 1 else "visualrag_image_multi"


def build_answer_prompt(
    query: Query,
    evidence: list[Candidate],
    template_id: str | None = None,
    strip_image_placeholders: bool = False,
) -> PromptInstance:
    """Generation prompt with the selected evidence in rank order."""
    template = get_template(template_id or answer_template_for(query.benchmark, len(evidence)))
    if template.kind != "answer":
        raise TemplateError(f"template {template.id!r} is not an answer template")
    _check_choices(template, query)
    refs = [c.payload_ref for c in evidence]
    if template.benchmark == "mragbench" and query.image_ref:
        refs.insert(0, query.image_ref)
    for ref in refs:
        check_payload_ref(ref)
    text = render(template, query.text, query.choices, len(refs), strip_image_placeholders)
    return PromptInstance(
        query_text=query.text,
        evidence_refs=tuple(refs),
        aux_question="",
        choices=query.choices,
        label_space=DEFAULT_LABELS,
        text=text,
        template_id=template.id,
        kind="answer",
        query_id=query.query_id,
        candidate_ids=tuple(c.id for c in evidence),
    )


def benchmark_of(template_id: str) -> str:
    return get_template(template_id).benchmark
