import _kdcot as k


def make_tokenizer():
    corpus = [
        "Q : What is 2 + 3 ? A : Let ' s think step by step . 2 + 3 = 5 . "
        "So the answer is 5 .",
        "True False and or not ( ) value of the",
    ]
    return k.TokenizerSpec.build(corpus, 64)


def test_tokenizer_round_trip():
    tok = make_tokenizer()
    ids = tok.encode("So the answer is 5 .", add_bos=True)
    assert ids[0] == k.TokenizerSpec.BOS
    assert tok.decode(ids) == "So the answer is 5 ."


def test_model_generate_deterministic():
    tok = make_tokenizer()
    cfg = k.ModelConfig()
    cfg.n_layers = 1
    cfg.n_heads = 2
    cfg.d_model = 16
    cfg.d_ff = 32
    cfg.vocab_size = len(tok)
    cfg.max_seq_len = 32
    model = k.build_model(cfg, seed=7, tokenizer_hash=tok.content_hash())
    d = k.DecodeParams()
    d.temperature = 0.0
    d.max_new_tokens = 8
    prompt = tok.encode("What is", add_bos=True)
    assert k.generate(model, prompt, d) == k.generate(model, prompt, d)


def test_distillation_loss_contract():
    t = [[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]]
    s = [[1.0, 2.0, 3.0], [9.0, -9.0, 0.0]]
    # Identical masked row: zero loss when only row 0 counts.
    assert k.distillation_loss(t, s, [1, 0]) == 0.0
    assert k.distillation_loss(t, s, [1, 1]) > 0.0


def test_render_and_strip():
    tok = make_tokenizer()
    ex = k.TrainingExample()
    ex.id = "e1"
    ex.instruction = "Q : What is 2 + 3 ? A :"
    ex.rationale = "2 + 3 = 5 ."
    ex.answer = "5"
    seq = k.render_training_sequence(ex, k.RenderMode.CoT, tok, 64)
    assert len(seq.ids) == len(seq.loss_mask)
    assert sum(seq.loss_mask) > 0
    stripped = k.strip_rationales([ex])
    assert stripped[0].rationale is None


def test_extract_answer():
    assert k.extract_answer("So the answer is (C) 12pm to 2pm.") == "(C)"
    assert k.extract_answer("no cue here") is None


def test_synthetic_oracle_verifies():
    inst = k.draw_instance(k.TaskKind.BooleanExpressions, seed=3, difficulty=1)
    rationale, answer = k.rationale_oracle(k.TaskKind.BooleanExpressions, inst)
    assert k.verify_rationale(k.TaskKind.BooleanExpressions, inst, rationale, answer)
