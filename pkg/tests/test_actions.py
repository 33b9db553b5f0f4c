from __future__ import annotations

import random
import string

import pytest

from deeprefine.actions import (
    ActionKind,
    DEFAULT_BATCH_CAP,
    RefinementAction,
    apply_actions,
    delete_edge,
    insert_edge,
    invert_actions,
    parse_actions,
    render_action,
    render_actions,
    replace_node,
    validate_actions,
)
from deeprefine.errors import ActionSyntaxError, BatchAborted
from deeprefine.kb import KnowledgeBase, Triple
from util import (
    COREF_BLOCK,
    DISAMBIG_BLOCK,
    DISAMBIG_TRIPLES,
    RUNNER_UP_BLOCK,
    RUNNER_UP_TRIPLES,
    random_kb,
)


class TestConstruction:
    def test_wrong_arity(self):
        with pytest.raises(ValueError):
            RefinementAction(ActionKind.INSERT_EDGE, ("A", "B"))
        with pytest.raises(ValueError):
            RefinementAction(ActionKind.REPLACE_NODE, ("A", "B", "C"))

    def test_empty_argument(self):
        with pytest.raises(ValueError):
            insert_edge("A", "  ", "B")

    def test_replace_same_old_new(self):
        with pytest.raises(ValueError):
            replace_node("A", "A")

    def test_args_trimmed(self):
        assert insert_edge(" A ", "r", " B ").args == ("A", "r", "B")

    def test_triple_form(self):
        assert insert_edge("A", "r", "B").triple() == Triple("A", "r", "B")
        with pytest.raises(ValueError):
            replace_node("A", "B").triple()


class TestParseCaseStudies:
    def test_coreference_block(self):
        actions = parse_actions(COREF_BLOCK)
        assert actions == [
            replace_node("the girl's phone number", "Samantha's phone number"),
            insert_edge("James", "received", "Samantha's phone number"),
        ]

    def test_runner_up_block(self):
        actions = parse_actions(RUNNER_UP_BLOCK)
        assert actions == [
            delete_edge("American Idol (season 3)", "runner-up", "Kree Harrison"),
            insert_edge("American Idol (season 3)", "runner-up", "Diana DeGarmo"),
            insert_edge("Diana DeGarmo", "runner-up of", "American Idol (season 3)"),
        ]

    def test_disambiguation_block(self):
        actions = parse_actions(DISAMBIG_BLOCK)
        assert len(actions) == 5
        assert actions[-1] == replace_node(
            "Ray Taylor", "Ray Taylor (1888-12-01 to 1952-02-15)")

    def test_double_quote_dialect(self):
        actions = parse_actions('insert_edge("A", "r", "B")|delete_edge("C", "s", "D")')
        assert actions == [insert_edge("A", "r", "B"), delete_edge("C", "s", "D")]

    def test_straight_single_quote_dialect(self):
        assert parse_actions("replace_node('old', 'new')") == [replace_node("old", "new")]

    def test_curly_quote_dialect(self):
        assert parse_actions("insert_edge(“A”, “r”, “B”)") == [
            insert_edge("A", "r", "B")]

    def test_newlines_between_actions(self):
        text = 'insert_edge("A", "r", "B") |\n delete_edge("C", "s", "D") |\n'
        assert len(parse_actions(text)) == 2

    def test_empty_content(self):
        assert parse_actions("") == []
        assert parse_actions("   \n ") == []


class TestParseErrors:
    def test_unknown_operator(self):
        with pytest.raises(ActionSyntaxError):
            parse_actions('merge_nodes("A", "B")')

    def test_wrong_arity(self):
        with pytest.raises(ActionSyntaxError):
            parse_actions('insert_edge("A", "B")')
        with pytest.raises(ActionSyntaxError):
            parse_actions('replace_node("A", "B", "C")')

    def test_unbalanced_quote(self):
        with pytest.raises(ActionSyntaxError) as exc_info:
            parse_actions('insert_edge("A", "r", "B)')
        assert exc_info.value.position >= 0

    def test_missing_separator(self):
        with pytest.raises(ActionSyntaxError):
            parse_actions('insert_edge("A", "r", "B") insert_edge("C", "s", "D")')

    def test_unquoted_argument(self):
        with pytest.raises(ActionSyntaxError):
            parse_actions("insert_edge(A, r, B)")

    def test_strict_mixed_quotes_rejected(self):
        text = "insert_edge(`A', `r', `B')|delete_edge(\"C\", \"s\", \"D\")"
        assert len(parse_actions(text)) == 2
        with pytest.raises(ActionSyntaxError):
            parse_actions(text, strict_quotes=True)

    def test_max_actions_cap(self):
        text = "|".join('insert_edge("A", "r", "B%d")' % i for i in range(5))
        assert len(parse_actions(text, max_actions=5)) == 5
        with pytest.raises(ActionSyntaxError):
            parse_actions(text, max_actions=4)


class TestRender:
    def test_canonical_form(self):
        batch = [replace_node("old", "new"), insert_edge("A", "r", "B")]
        assert render_actions(batch) == 'replace_node("old", "new")|insert_edge("A", "r", "B")'

    def test_render_parse_fixpoint_on_case_studies(self):
        for block in (COREF_BLOCK, RUNNER_UP_BLOCK, DISAMBIG_BLOCK):
            actions = parse_actions(block)
            canonical = render_actions(actions)
            assert parse_actions(canonical) == actions
            assert render_actions(parse_actions(canonical)) == canonical

    def test_randomized_round_trip(self):
        rng = random.Random(19)
        alphabet = string.ascii_letters + string.digits + " .-'()|,"
        for _ in range(200):
            kind = rng.choice(list(ActionKind))
            n_args = 2 if kind is ActionKind.REPLACE_NODE else 3
            args = []
            while len(args) < n_args:
                a = "".join(rng.choice(alphabet)
                            for _ in range(rng.randrange(1, 12))).strip()
                # double quote is the canonical delimiter, so it never appears;
                # replace_node additionally needs old != new
                if a and a not in args:
                    args.append(a)
            try:
                batch = [RefinementAction(kind, tuple(args))]
            except ValueError:
                continue
            assert parse_actions(render_actions(batch)) == batch


class TestValidate:
    def test_clean_batch_no_warnings(self):
        kb = KnowledgeBase(RUNNER_UP_TRIPLES)
        assert validate_actions(parse_actions(RUNNER_UP_BLOCK), kb) == []

    def test_delete_absent(self):
        warnings = validate_actions([delete_edge("X", "r", "Y")], KnowledgeBase())
        assert [w.code for w in warnings] == ["absent_triple"]

    def test_duplicate_insert(self):
        kb = KnowledgeBase([Triple("A", "r", "B")])
        warnings = validate_actions([insert_edge("A", "r", "B")], kb)
        assert [w.code for w in warnings] == ["duplicate"]

    def test_replace_unknown_item(self):
        warnings = validate_actions([replace_node("ghost", "real")], KnowledgeBase())
        assert [w.code for w in warnings] == ["unknown_item"]

    def test_delete_then_reinsert_flags_ordering(self):
        kb = KnowledgeBase([Triple("A", "r", "B")])
        batch = [delete_edge("A", "r", "B"), insert_edge("A", "r", "B")]
        codes = [w.code for w in validate_actions(batch, kb)]
        assert "conflict_ordering" in codes

    def test_never_mutates_kb(self):
        kb = KnowledgeBase([Triple("A", "r", "B")])
        validate_actions([delete_edge("A", "r", "B"), replace_node("A", "Z")], kb)
        assert kb.triples == {Triple("A", "r", "B")}


class TestApply:
    def test_disambiguation_batch_end_state(self):
        kb = KnowledgeBase(DISAMBIG_TRIPLES)
        refined, report = apply_actions(kb, parse_actions(DISAMBIG_BLOCK))
        assert "Ray Taylor" not in refined.items
        assert "Ray Taylor (1888-12-01 to 1952-02-15)" in refined.items
        assert Triple("Modern Husbands", "directed-by", "Luis Bayón Herrera") in refined
        assert report.counts_by_kind == {"insert_edge": 4, "replace_node": 1}
        # input untouched
        assert "Ray Taylor" in kb.items

    def test_runner_up_batch(self):
        kb = KnowledgeBase(RUNNER_UP_TRIPLES)
        refined, report = apply_actions(kb, parse_actions(RUNNER_UP_BLOCK))
        assert Triple("American Idol (season 3)", "runner-up", "Kree Harrison") not in refined
        assert Triple("American Idol (season 3)", "runner-up", "Diana DeGarmo") in refined
        assert report.outcomes == ["applied"] * 3

    def test_empty_batch(self):
        kb = KnowledgeBase([Triple("A", "r", "B")])
        refined, report = apply_actions(kb, [])
        assert refined.triples == kb.triples
        assert report.outcomes == []
        assert report.kb_revision_before == report.kb_revision_after

    def test_second_run_is_noops(self):
        kb = KnowledgeBase(RUNNER_UP_TRIPLES)
        batch = parse_actions(RUNNER_UP_BLOCK)
        once, _ = apply_actions(kb, batch)
        twice, report = apply_actions(once, batch)
        assert twice.triples == once.triples
        assert report.outcomes == ["noop_missing", "noop_duplicate", "noop_duplicate"]

    def test_insert_only_count_delta(self):
        rng = random.Random(8)
        for _ in range(30):
            kb = random_kb(rng, 10)
            batch = [insert_edge(f"new{i}", "rel", f"val{i}") for i in range(4)]
            refined, _ = apply_actions(kb, batch)
            assert len(refined) == len(kb) + 4

    def test_abort_leaves_input_unchanged(self):
        kb = KnowledgeBase([Triple("A", "r", "B")], strict_replace=True)
        batch = [insert_edge("C", "s", "D"), replace_node("ghost", "real")]
        with pytest.raises(BatchAborted) as exc_info:
            apply_actions(kb, batch)
        assert exc_info.value.action_index == 1
        assert kb.triples == {Triple("A", "r", "B")}

    def test_batch_cap(self):
        kb = KnowledgeBase()
        batch = [insert_edge(f"h{i}", "r", f"t{i}") for i in range(DEFAULT_BATCH_CAP + 1)]
        with pytest.raises(BatchAborted):
            apply_actions(kb, batch)
        assert len(kb) == 0
        refined, _ = apply_actions(kb, batch, batch_cap=DEFAULT_BATCH_CAP + 1)
        assert len(refined) == DEFAULT_BATCH_CAP + 1


class TestInvert:
    def test_mirrors_each_kind(self):
        batch = [insert_edge("A", "r", "B"), delete_edge("C", "s", "D"),
                 replace_node("old", "new")]
        assert invert_actions(batch) == [
            replace_node("new", "old"),
            insert_edge("C", "s", "D"),
            delete_edge("A", "r", "B"),
        ]

    def test_involution(self):
        batch = parse_actions(RUNNER_UP_BLOCK)
        assert invert_actions(invert_actions(batch)) == batch

    def test_apply_then_inverse_restores(self):
        for triples, block in ((RUNNER_UP_TRIPLES, RUNNER_UP_BLOCK),
                               (DISAMBIG_TRIPLES, DISAMBIG_BLOCK)):
            kb = KnowledgeBase(triples)
            batch = parse_actions(block)
            refined, _ = apply_actions(kb, batch)
            restored, _ = apply_actions(refined, invert_actions(batch))
            assert restored.triples == kb.triples

    def test_inverse_restores_on_random_insert_delete_batches(self):
        rng = random.Random(37)
        for _ in range(50):
            kb = random_kb(rng, 12)
            batch = []
            for _ in range(rng.randrange(1, 6)):
                if rng.random() < 0.5:
                    batch.append(insert_edge(f"n{rng.randrange(100)}", "rel",
                                             f"v{rng.randrange(100)}"))
                else:
                    victim = rng.choice(sorted(kb.triples, key=lambda t: t.key))
                    batch.append(delete_edge(*victim.key))
            # restrict to batches whose effects don't overlap
            keys = [a.args for a in batch]
            if len(set(keys)) != len(keys):
                continue
            if any(a.kind is ActionKind.INSERT_EDGE and a.triple() in kb for a in batch):
                continue
            refined, _ = apply_actions(kb, batch)
            restored, _ = apply_actions(refined, invert_actions(batch))
            assert restored.triples == kb.triples
