"""Writes parse_corpus.jsonl. Every expectation is fixed by how the case is
built, never by running the parser."""

import json
import random

rng = random.Random(20240611)
cases = []


def add(mode, raw, ok, answer, think=None):
    case = {"id": f"c{len(cases):03d}", "mode": mode, "raw": raw, "format_ok": ok, "answer": answer}
    if think is not None:
        case["think"] = think
    cases.append(case)


def label(s):
    return {"label": s}


def bbox(a):
    x1, y1, x2, y2 = a
    return {"bbox": [min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2)]}


LABELS = ["melanoma", "nevus", "basal cell carcinoma", "Seborrheic Keratosis", "dermatofibroma", "AKIEC", "vasc-lesion", "class_7"]
THINKS = ["round lesion", "", "The image shows an irregular border and dark pigment.", "asymmetric; blue-white veil", "  padded  ", "multi\nline\nreasoning"]
NOISE = "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?'\"()-_=+*&^%$#@~|/\u00e9\u4e2d\u2603\U0001f600"


def noise(n):
    return "".join(rng.choice(NOISE) for _ in range(n))


# classification, well formed
for i in range(24):
    t, l = THINKS[i % len(THINKS)], LABELS[i % len(LABELS)]
    pre = ["", "Sure. ", "answer follows\n"][i % 3]
    post = ["", " Done.", "\n"][(i // 3) % 3]
    inner = [l, f" {l} ", f"\n{l}"][(i // 2) % 3]
    add("classification", f"{pre}<think>{t}</think>\\boxed{{{inner}}}{post}", True, label(l), t.strip())

# classification, last boxed wins
for i in range(6):
    a, b = LABELS[i], LABELS[-1 - i]
    add("classification", f"<think>x</think>first \\boxed{{{a}}} then \\boxed{{{b}}}", True, label(b))
# boxed both sides of think: one after is enough, last one is the label
add("classification", "\\boxed{nevus}<think>x</think>\\boxed{melanoma}", True, label("melanoma"))
add("classification", "<think>x</think>\\boxed{melanoma}<think>y</think>", False, label("melanoma"))

# classification, malformed
for i in range(6):
    l = LABELS[i]
    add("classification", f"\\boxed{{{l}}}", False, label(l))
    add("classification", f"<think>reason\\boxed{{{l}}}", False, label(l))
    add("classification", f"<think>a</think><think>b</think>\\boxed{{{l}}}", False, label(l))
    add("classification", f"\\boxed{{{l}}}<think>late</think>", False, label(l))
    add("classification", f"<think>no answer {i}</think>{l}", False, None)
    add("classification", f"<think>x</think>\\boxed{{{l}", False, None)
add("classification", "<THINK>x</THINK>\\boxed{melanoma}", False, label("melanoma"))
add("classification", "</think>x<think>\\boxed{melanoma}", False, label("melanoma"))
add("classification", "", False, None)
add("classification", "<think></think>\\boxed{}", True, label(""))

# grading
for g in range(8):
    add("grading", f"<think>grade {g}</think>\\boxed{{{g}}}", True, label(str(g)))
for raw, ok, ans in [
    ("<think>t</think>\\boxed{ 3 }", True, label("3")),
    ("<think>t</think>\\boxed{-1}", True, label("-1")),
    ("<think>t</think>\\boxed{+2}", True, label("+2")),
    ("<think>t</think>\\boxed{three}", False, label("three")),
    ("<think>t</think>\\boxed{2.5}", False, label("2.5")),
    ("<think>t</think>\\boxed{}", False, label("")),
    ("<think>t</think>\\boxed{1} no \\boxed{4}", True, label("4")),
    ("<think>t</think>\\boxed{1} no \\boxed{x}", False, label("x")),
    ("\\boxed{2}", False, label("2")),
    ("<think>t</think>2", False, None),
    ("<think>t</think><think>u</think>\\boxed{2}", False, label("2")),
    ("<think>t</think>\\boxed{99999999999999999999}", False, label("99999999999999999999")),
]:
    add("grading", raw, ok, ans)

# detection, well formed templates
for i in range(20):
    a = [rng.randint(0, 500) for _ in range(4)]
    if i % 4 == 1:
        a = [round(rng.uniform(0, 500), 2) for _ in range(4)]
    nums = ", ".join(str(v) for v in a)
    t = THINKS[i % len(THINKS)]
    body = [f'{{"bbox": [{nums}]}}', f"[{nums}]", f'{{"bbox":[{nums}], "label": "lesion"}}', f" [ {nums} ] "][i % 4]
    post = ["", " ok", "\n"][i % 3]
    add("detection", f"<think>{t}</think><answer>{body}</answer>{post}", True, bbox(a), t.strip())

# detection, malformed
for i in range(6):
    a = [rng.randint(0, 300) for _ in range(4)]
    nums = ",".join(str(v) for v in a)
    add("detection", f"<answer>[{nums}]</answer>", False, bbox(a))
    add("detection", f"<think>t</think>[{nums}]", False, bbox(a))
    add("detection", f"<answer>[{nums}]</answer><think>t</think>", False, bbox(a))
    add("detection", f"<think>t</think><answer>[{nums}]</answer><answer>[1,2,3,4]</answer>", False, bbox(a))
    add("detection", f"<think>t</think><answer>[{nums}]", False, bbox(a))
    add("detection", f"<think>t</think><answer>[{','.join(str(v) for v in a[:3])}]</answer>", False, None)
for raw, ok, ans in [
    ("<think>t</think><answer>[1,2,3,4,5]</answer>", False, None),
    ("<think>t</think><answer>[a,b,c,d]</answer>", False, None),
    ("<think>t</think><answer>[1,2,inf,4]</answer>", False, None),
    ("<think>t</think><answer>[1,2,NaN,4]</answer>", False, None),
    ("<think>t</think><answer></answer>", False, None),
    ("<think>t</think><answer>[[1,2,3,4]]</answer>", True, bbox([1, 2, 3, 4])),
    ("<think>t</think><answer>[10, 20, 5, 8]</answer>", True, bbox([10, 20, 5, 8])),
    ("<think>t</think><answer>[1e1, 2.5e0, -3, 4]</answer>", True, bbox([10, 2.5, -3, 4])),
    ("<think>t</think><answer>{\"bbox\": [1, 2, 3]} [5, 6, 7, 8]</answer>", True, bbox([5, 6, 7, 8])),
    ("<think>t</think><Answer>[1,2,3,4]</Answer>", False, bbox([1, 2, 3, 4])),
    ("<think>a</think><think>b</think><answer>[1,2,3,4]</answer>", False, bbox([1, 2, 3, 4])),
    ("<think>t</think>\\boxed{melanoma}", False, None),
]:
    add("detection", raw, ok, ans)

# fuzz: noise without grammar characters around well-formed completions
for i in range(20):
    n1, n2 = rng.randint(0, 40), rng.randint(0, 40)
    pre, post = noise(n1), noise(n2)
    mode = ["classification", "grading", "detection"][i % 3]
    if mode == "classification":
        l = LABELS[i % len(LABELS)]
        add(mode, f"{pre}<think>{noise(10)}</think>\\boxed{{{l}}}{post}", True, label(l))
    elif mode == "grading":
        g = rng.randint(0, 4)
        add(mode, f"{pre}<think>{noise(10)}</think>\\boxed{{{g}}}{post}", True, label(str(g)))
    else:
        a = [rng.randint(0, 99) for _ in range(4)]
        add(mode, f"{pre}<think>{noise(10)}</think><answer>{noise(5)}[{', '.join(map(str, a))}]{noise(5)}</answer>{post}", True, bbox(a))

# fuzz: pure noise carries no answer
for i in range(200 - len(cases)):
    mode = ["classification", "grading", "detection"][i % 3]
    add(mode, noise(rng.randint(1, 120)), False, None)

assert len(cases) == 200, len(cases)
with open("parse_corpus.jsonl", "w", encoding="utf-8") as f:
    for c in cases:
        f.write(json.dumps(c, ensure_ascii=False) + "\n")
