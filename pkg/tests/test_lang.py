import pytest

from conftest import TRAVELLER, all_sources
from tarl.errors import ParseError
from tarl.lang import (
    Assign, BinOp, If, Name, Num, Program, SourceFile, find_numeric_literals, find_statement,
    format_number, parse, parse_file, replace_literal, rewrite, stmt_text, unparse, walk_statements,
)


@pytest.mark.parametrize("path", all_sources(), ids=lambda p: p.name)
def test_round_trip(path):
    program = parse_file(path)
    text = unparse(program).text
    again = parse(text)
    assert again == program
    assert unparse(again).text == text


def test_statement_lines_match_source(traveller):
    lines = {stmt_text(s): s.line for s in walk_statements(traveller.statements)}
    assert lines["pos = data.pose.pose.position"] == 22
    assert lines["def travel(goal, vout)"] == 24
    assert lines["err, delta, vel = 1, 0, 0"] == 26
    assert lines["while err > Epsilon"] == 27
    assert lines["delta = goal - pos"] == 28
    assert lines["err = abs(delta)"] == 29
    assert lines["vel = 5 * delta"] == 30
    assert lines["vout.publish(vel)"] == 31
    assert lines["rospy.Subscriber(Odometry, callback)"] == 36
    assert lines["while True"] == 38


def test_imports_are_skipped(traveller):
    assert traveller.ignored_lines == (7, 8, 9)
    assert traveller.entry is not None
    assert set(traveller.functions()) == {"callback", "travel"}


def test_source_file_keeps_path():
    program = parse(SourceFile("x = 1\n", "prog.mb"))
    assert program == parse("x = 1")


@pytest.mark.parametrize("text, line", [
    ("x = (1 +\n", 1),
    ("x = 1\ny = = 2\n", 2),
    ("def f(:\n    pass\n", 1),
    ("x = 1\n  y = 2\n", 2),
    ("while x\n    pass\n", 1),
    ("x = 1 $ 2\n", 1),
    ("if x:\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_number_text_is_preserved():
    program = parse("a = 1.50\nb = 2e3\n")
    assert unparse(program).text.splitlines()[:2] == ["a = 1.50", "b = 2e3"]


def test_equality_ignores_layout():
    assert parse("x = 1 + 2") == parse("\n\nx   =   1+2\n")
    assert parse("x = 1 + 2") != parse("x = 1 + 3")


def test_parentheses_follow_precedence():
    text = "x = (a - (b - c)) * -(d + e)\ny = not (a or b) and c\n"
    program = parse(text)
    assert unparse(program).text.splitlines()[:2] == [
        "x = (a - (b - c)) * -(d + e)",
        "y = not (a or b) and c",
    ]


def test_numeric_literals(traveller):
    stmt = find_statement(traveller, 30)
    found = find_numeric_literals(stmt)
    assert [(ref.line, ref.index, ref.text, value) for ref, value in found] == [(30, 0, "5", 5.0)]
    mutated = replace_literal(stmt, found[0][0], 5 * 0.25)
    assert stmt_text(mutated) == "vel = 1.25 * delta"
    assert find_numeric_literals(find_statement(traveller, 29)) == []


def test_format_number():
    assert format_number(10.0) == "10"
    assert format_number(1.25) == "1.25"
    assert format_number(-3) == "-3"


def test_rewrite_splices_and_recurses(traveller):
    def wrap(s):
        if s.line == 30:
            return If(Name("flag"), (s,), ())
        return s

    out = rewrite(traveller, wrap)
    assert isinstance(out, Program)
    travel = out.functions()["travel"]
    loop = travel.body[2]
    assert isinstance(loop.body[2], If)
    assert stmt_text(loop.body[2].body[0]) == "vel = 5 * delta"
    # the original is untouched
    assert isinstance(find_statement(traveller, 30), Assign)


def test_ast_nodes_are_values():
    a = BinOp("*", Num("5", 5.0), Name("delta"))
    b = BinOp("*", Num("5", 5.0, line=9), Name("delta", line=9))
    assert a == b and hash(a) == hash(b)


def test_parse_file_missing():
    with pytest.raises(OSError):
        parse_file(TRAVELLER.with_name("missing.mb"))
