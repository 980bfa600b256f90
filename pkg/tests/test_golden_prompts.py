"""The golden prompt fixture pins the exact prompt strings and their order.

Any external embedding exporter must reproduce this file bytewise from the
same class list and template data, so both sides key CTEF entries identically.
"""

from pathlib import Path

from copt.text_embed import ClassList, builtin_template, golden_prompt_lines

GOLDEN = Path(__file__).parent / "golden" / "prompts.txt"
CLASSES = ClassList(("background", "disk", "square", "triangle", "bar"))


def test_formatters_reproduce_golden_fixture_bytewise():
    lines = golden_prompt_lines(builtin_template("synthetic"), builtin_template("real"), CLASSES)
    assert ("\n".join(lines) + "\n").encode("utf-8") == GOLDEN.read_bytes()


def test_fixture_covers_both_modes():
    text = GOLDEN.read_text(encoding="utf-8").splitlines()
    # 2 domains x 5 classes handcrafted, then (14 + 16) attributes x 5 classes
    assert len(text) == 10 + (14 + 16) * 5
    assert text[0] == "A synthetic of a background"
    assert "A disk with lack of realism" in text
    assert "A bar with a tangible sense of scale" == text[-1]
