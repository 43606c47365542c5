import random

import pytest
from hypothesis import given, settings, strategies as st

from gsr import prompts
from gsr.clients import ChatError, ChatUnavailable, FunctionChatClient, repeat_rejecting_selector
from gsr.forge import (ForgeError, IndexingSample, QAExample, QuestionTemplate, RetrievalSample,
                       SelectionAborted, build_index_corpus, build_indexing_samples, data_stats,
                       filter_forward_only, generate_templates, load_samples, mine_raw_retrieval,
                       parse_selection, select_with_llm, selection_prompt, write_jsonl)
from gsr.kg import Direction
from gsr.paths import DirectedHop, follow_hops

F, I = Direction.FORWARD, Direction.INVERSE


def H(rel, d=F):
    return DirectedHop(rel, d)


def sample(chains, eid="q1"):
    return RetrievalSample(eid, "who?", "a", chains)


A_CHAIN = (H("r1"), H("r2"))
G_CHAIN = (H("g"), H("g", I))


def test_qa_example_needs_topic():
    with pytest.raises(ForgeError):
        QAExample("x", "q", [], ["a"])


def test_mine_toy(toy):
    out = mine_raw_retrieval(toy, [QAExample("q", "what?", ["a"], ["c"])], max_hops=2)
    assert len(out) == 1 and set(out[0].chains) == {A_CHAIN, G_CHAIN}
    assert out[0].tier == "raw"


def test_mine_edge_cases(toy):
    same = mine_raw_retrieval(toy, [QAExample("q", "?", ["a"], ["a"])])
    assert same[0].chains == [()]
    # d reaches c in two hops
    assert mine_raw_retrieval(toy, [QAExample("q", "?", ["d"], ["c"])], max_hops=1) == []
    assert mine_raw_retrieval(toy, [QAExample("q", "?", ["nobody"], ["c"])]) == []
    assert mine_raw_retrieval(toy, [QAExample("q", "?", ["a"], ["ghost"])]) == []


def test_mine_replay_reaches_answer(toy):
    ex = QAExample("q", "?", ["a"], ["c", "b", "m"])
    for s in mine_raw_retrieval(toy, [ex], threads=2):
        topic = toy.resolve(s.topic)
        for chain in s.chains:
            hops = [DirectedHop(toy.resolve(h.relation, "relation"), h.direction) for h in chain]
            reached = {toy.entities.label(e) for e in follow_hops(toy, topic, hops)}
            assert reached & set(ex.answers)


def test_filter_examples():
    out = filter_forward_only([sample([A_CHAIN, G_CHAIN])])
    assert out[0].chains == [A_CHAIN] and out[0].tier == "filtered"
    fwd = sample([A_CHAIN])
    assert filter_forward_only([fwd])[0].chains == [A_CHAIN]
    assert filter_forward_only([sample([(H("g", I),)])]) == []


def test_parse_selection():
    assert parse_selection("1", 2) == [0]
    assert parse_selection("2, 1", 2) == [0, 1]
    assert parse_selection("", 3) == []
    assert parse_selection("none of them look right", 3) is None
    assert parse_selection("1, 9", 2) == [0]


def _selector(reply):
    return FunctionChatClient(lambda prompt: reply)


def test_select_keeps_requested_in_original_order():
    s = sample([A_CHAIN, G_CHAIN])
    assert select_with_llm([s], _selector("1"))[0].chains == [A_CHAIN]
    out = select_with_llm([s], _selector("2, 1"))[0]
    assert out.chains == [A_CHAIN, G_CHAIN] and out.tier == "selected"


def test_select_falls_back_to_filtered():
    s = sample([A_CHAIN, G_CHAIN])
    assert select_with_llm([s], _selector("no idea"))[0].chains == [A_CHAIN]

    def broken(prompt):
        raise ChatError("500", 500)
    assert select_with_llm([s], FunctionChatClient(broken))[0].chains == [A_CHAIN]


def test_select_aborts_with_partial_progress():
    calls = {"n": 0}

    def flaky(prompt):
        calls["n"] += 1
        if calls["n"] > 2:
            raise ChatUnavailable("down")
        return "1"

    samples = [RetrievalSample(f"q{i}", f"question q{i}", "a", [A_CHAIN]) for i in range(5)]
    with pytest.raises(SelectionAborted) as info:
        select_with_llm(samples, FunctionChatClient(flaky), max_in_flight=1)
    assert [s.example_id for s in info.value.completed] == ["q0", "q1"]
    assert info.value.remaining == 3


def test_selection_prompt_is_template_exact():
    p = selection_prompt(sample([A_CHAIN, G_CHAIN]))
    assert "1: r1 -- r2\n2: g -- g (inverse)" in p
    assert p == prompts.load(prompts.SELECT_PATHS).replace(
        "{path_list}", "1: r1 -- r2\n2: g -- g (inverse)").replace("{question}", "who?")


def test_mock_selector_rejects_repeats():
    out = select_with_llm([sample([A_CHAIN, G_CHAIN])], FunctionChatClient(repeat_rejecting_selector))
    assert out[0].chains == [A_CHAIN]


def test_offline_templates():
    ts = generate_templates("people.person.sibling", ("x", "people.person.sibling", "y"))
    assert len(ts) == 10
    assert "what is the sibling of [SUBJECT]?" in [t.text for t in ts]


def test_generated_templates_validated():
    reply = "1. what is [SUBJECT]'s r?\n2. no placeholder here\n3. [SUBJECT] and [SUBJECT]\n- who is r of [SUBJECT]"
    ts = generate_templates("r", ("s", "r", "o"), _selector(reply))
    assert [t.text for t in ts] == ["what is [SUBJECT]'s r?", "who is r of [SUBJECT]"]
    with pytest.raises(ForgeError):
        QuestionTemplate("r", "[SUBJECT] [SUBJECT]")


def test_template_prompt_exact():
    seen = []
    generate_templates("r1", ("a", "r1", "b"), FunctionChatClient(lambda p: seen.append(p) or ""))
    assert seen == [prompts.fill(prompts.PSEUDO_QUESTIONS, relation="r1", triple_example="(a, r1, b)")]


def test_indexing_samples(toy):
    t = QuestionTemplate("r1", "what is the r1 of [SUBJECT]?")
    out = build_indexing_samples(toy, [t], per_template=5, seed=3)
    assert len(out) == 5
    assert {s.pseudo_question for s in out} <= {"what is the r1 of a?", "what is the r1 of d?"}
    assert all(s.relation == "r1" and "[SUBJECT]" not in s.pseudo_question for s in out)
    assert build_indexing_samples(toy, [QuestionTemplate("nope", "x [SUBJECT]")]) == []
    one = build_indexing_samples(toy, [QuestionTemplate("r2", "[SUBJECT]?")], per_template=1)
    assert one == [IndexingSample("b?", "r2")]
    assert out == build_indexing_samples(toy, [t], per_template=5, seed=3)


def test_indexing_cap_per_relation(toy):
    corpus = build_index_corpus(toy, per_template=3)
    by_rel = {}
    for s in corpus:
        by_rel[s.relation] = by_rel.get(s.relation, 0) + 1
    assert by_rel == {"r1": 10, "r2": 10, "g": 10}


def test_data_stats():
    st_ = data_stats([sample([(H("r1"), H("r2")), (H("g"), H("g"))])])
    assert st_.repeated_relation_fraction == 0.5 and st_.chains == 2 and st_.mean_chain_length == 2
    empty = data_stats([])
    assert (empty.examples, empty.chains, empty.repeated_relation_fraction) == (0, 0, 0.0)


def test_data_stats_random_recount():
    rng = random.Random(0)
    chains = [tuple(H(rng.choice("xy"), rng.choice([F, I])) for _ in range(2)) for _ in range(1000)]
    expected = sum(c[0].relation == c[1].relation for c in chains) / 1000
    assert data_stats([sample(chains)]).repeated_relation_fraction == expected


def test_jsonl_roundtrip(tmp_path):
    s = sample([A_CHAIN, G_CHAIN])
    write_jsonl(tmp_path / "x.jsonl", [s.to_json()])
    assert load_samples(tmp_path / "x.jsonl") == [s]
    assert s.to_json()["chains"][1] == [{"relation": "g", "direction": "f"}, {"relation": "g", "direction": "i"}]


hop = st.builds(DirectedHop, st.sampled_from(["p", "q", "r"]), st.sampled_from([F, I]))
chain_sets = st.lists(st.lists(hop, min_size=1, max_size=3).map(tuple), min_size=1, max_size=6, unique=True)


@given(chain_sets, st.lists(st.integers(1, 8), max_size=5))
@settings(max_examples=100, deadline=None)
def test_subset_laws(chains, picks):
    s = sample(chains)
    for out in filter_forward_only([s]):
        assert set(out.chains) <= set(chains)
        assert all(h.direction is F for c in out.chains for h in c)
    reply = ", ".join(map(str, picks))
    for out in select_with_llm([s], _selector(reply)):
        assert set(out.chains) <= set(chains)
        assert out.chains == [c for c in chains if c in out.chains]
