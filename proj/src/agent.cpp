#include "lingo/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lingo {

AgentDims AgentDims::desk() { return AgentDims{}; }

AgentDims AgentDims::paper() {
  AgentDims d;
  d.embed = 1024;
  d.state = 1024;
  d.key = 1024;
  d.mem_slots = 10;
  d.image_size = 32;
  d.conv_channels = {32, 64, 128, 256};
  d.enc_fc = {512};
  d.controller_hidden = {1024, 1024};
  d.fusion_hidden = {50, 10};
  d.gmem_hidden = {50, 30, 20};
  d.value_hidden = {512, 204};
  d.extract_state = 1024;
  d.extract_out = 1024;
  d.fmlp_hidden = 1024;
  return d;
}

namespace {

Tensor init_weight(Rng& rng, std::vector<std::int64_t> shape,
                   std::int64_t fan_in) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : t.v) x = s * rng.normal();
  return t;
}

// small random bias keeps early iterates off the exact relu kinks
Tensor init_bias(Rng& rng, std::int64_t n) {
  Tensor t({n});
  for (auto& x : t.v) x = 0.01 * rng.normal();
  return t;
}

void add_linear(ParamStore& store, Rng& rng, const std::string& name,
                std::int64_t out, std::int64_t in, bool trainable = true) {
  store.add(name + "_w", init_weight(rng, {out, in}, in), trainable);
  store.add(name + "_b", init_bias(rng, out), trainable);
}

void add_gru(ParamStore& store, Rng& rng, const std::string& name,
             std::int64_t state, std::int64_t in) {
  for (const char* gate : {"z", "r", "n"}) {
    store.add(name + "_w" + gate, init_weight(rng, {state, in}, in));
    store.add(name + "_u" + gate, init_weight(rng, {state, state}, state));
    store.add(name + "_b" + gate, init_bias(rng, state));
  }
}

}  // namespace

void Agent::init_params(const AgentDims& d, const Vocabulary& vocab,
                        ParamStore& store, Rng& rng) {
  // Frozen embedding table, plain unit-variance entries. Row norms of about
  // sqrt(d) keep E^T r sharply peaked when the readout matches one row,
  // which is what makes the memory path a usable word distribution.
  {
    Tensor e({vocab.size(), d.embed});
    for (auto& x : e.v) x = rng.normal();
    store.add("embed", std::move(e), /*trainable=*/false);
  }

  // visual encoder
  int cin = 3, side = d.image_size;
  for (std::size_t i = 0; i < d.conv_channels.size(); ++i) {
    const int cout = d.conv_channels[i];
    store.add("enc_conv" + std::to_string(i) + "_w",
              init_weight(rng, {cout, 3, 3, cin}, 9 * cin));
    store.add("enc_conv" + std::to_string(i) + "_b",
              init_bias(rng, cout));
    cin = cout;
    side = (side - 3) / 2 + 1;  // pool 3, stride 2
    if (side < 1)
      throw std::runtime_error("image too small for the conv stack");
  }
  std::int64_t flat = static_cast<std::int64_t>(side) * side * cin;
  for (std::size_t i = 0; i < d.enc_fc.size(); ++i) {
    add_linear(store, rng, "enc_fc" + std::to_string(i), d.enc_fc[i], flat);
    flat = d.enc_fc[i];
  }
  add_linear(store, rng, "enc_out", d.key, flat);

  // token pathway: embedding -> three projections -> shared cell
  add_linear(store, rng, "inproj0", d.state, d.embed);
  add_linear(store, rng, "inproj1", d.state, d.state);
  add_linear(store, rng, "inproj2", d.state, d.state);
  add_gru(store, rng, "gru", d.state, d.state);

  // state-to-embedding bridge for the recurrent word distribution
  add_linear(store, rng, "fmlp0", d.fmlp_hidden, d.state);
  add_linear(store, rng, "fmlp1", d.embed, d.fmlp_hidden);

  // fusion gate over (state, confidence)
  {
    std::int64_t in = d.state + 1;
    for (std::size_t i = 0; i < d.fusion_hidden.size(); ++i) {
      add_linear(store, rng, "fuse" + std::to_string(i), d.fusion_hidden[i],
                 in);
      in = d.fusion_hidden[i];
    }
    add_linear(store, rng, "fuse" + std::to_string(d.fusion_hidden.size()), 1,
               in);
  }

  // controller over (state, confidence), residual on top
  {
    std::int64_t in = d.state + 1;
    for (std::size_t i = 0; i < d.controller_hidden.size(); ++i) {
      add_linear(store, rng, "ctrl" + std::to_string(i),
                 d.controller_hidden[i], in);
      in = d.controller_hidden[i];
    }
    add_linear(store, rng, "ctrl" + std::to_string(d.controller_hidden.size()),
               d.state, in);
  }

  // sentence content extraction
  add_gru(store, rng, "extf", d.extract_state, d.embed);
  add_gru(store, rng, "extb", d.extract_state, d.embed);
  add_linear(store, rng, "exts0", d.extract_out, 2 * d.extract_state);
  add_linear(store, rng, "exts1", d.extract_out, d.extract_out);
  add_linear(store, rng, "extw0", d.extract_out,
             d.embed + 2 * d.extract_state);
  add_linear(store, rng, "extw1", d.extract_out, d.extract_out);
  {
    std::int64_t in = 2 * d.extract_state;
    for (std::size_t i = 0; i < d.gmem_hidden.size(); ++i) {
      add_linear(store, rng, "gmem" + std::to_string(i), d.gmem_hidden[i], in);
      in = d.gmem_hidden[i];
    }
    add_linear(store, rng, "gmem" + std::to_string(d.gmem_hidden.size()), 1,
               in);
  }

  // value network and its frozen target copy (synced below)
  for (const char* prefix : {"val", "tval"}) {
    std::int64_t in = d.state + 1;
    const bool trainable = std::string(prefix) == "val";
    for (std::size_t i = 0; i < d.value_hidden.size(); ++i) {
      store.add(std::string(prefix) + std::to_string(i) + "_w",
                init_weight(rng, {d.value_hidden[i], in}, in), trainable);
      store.add(std::string(prefix) + std::to_string(i) + "_b",
                init_bias(rng, d.value_hidden[i]), trainable);
      in = d.value_hidden[i];
    }
    store.add(std::string(prefix) + std::to_string(d.value_hidden.size()) +
                  "_w",
              init_weight(rng, {1, in}, in), trainable);
    store.add(std::string(prefix) + std::to_string(d.value_hidden.size()) +
                  "_b",
              init_bias(rng, 1), trainable);
  }
  for (std::size_t i = 0; i <= d.value_hidden.size(); ++i) {
    store.get("tval" + std::to_string(i) + "_w").value =
        store.get("val" + std::to_string(i) + "_w").value;
    store.get("tval" + std::to_string(i) + "_b").value =
        store.get("val" + std::to_string(i) + "_b").value;
  }
}

Agent::Agent(const AgentDims& dims, const Vocabulary* vocab, ParamStore* store)
    : dims_(dims), vocab_(vocab), store_(store) {
  embed_ = &store->get("embed");
  for (std::size_t i = 0; i < dims_.conv_channels.size(); ++i) {
    conv_w_.push_back(&store->get("enc_conv" + std::to_string(i) + "_w"));
    conv_b_.push_back(&store->get("enc_conv" + std::to_string(i) + "_b"));
  }
  for (std::size_t i = 0; i < dims_.enc_fc.size(); ++i) {
    enc_w_.push_back(&store->get("enc_fc" + std::to_string(i) + "_w"));
    enc_b_.push_back(&store->get("enc_fc" + std::to_string(i) + "_b"));
  }
  enc_w_.push_back(&store->get("enc_out_w"));
  enc_b_.push_back(&store->get("enc_out_b"));
  for (int i = 0; i < 3; ++i) {
    inproj_w_[i] = &store->get("inproj" + std::to_string(i) + "_w");
    inproj_b_[i] = &store->get("inproj" + std::to_string(i) + "_b");
  }
  auto fill_gru = [&](const char* name, const Param* out[9]) {
    int k = 0;
    for (const char* gate : {"z", "r", "n"}) {
      out[k++] = &store->get(std::string(name) + "_w" + gate);
      out[k++] = &store->get(std::string(name) + "_u" + gate);
      out[k++] = &store->get(std::string(name) + "_b" + gate);
    }
  };
  fill_gru("gru", gru_);
  fill_gru("extf", extf_);
  fill_gru("extb", extb_);
  for (int i = 0; i < 2; ++i) {
    fmlp_w_[i] = &store->get("fmlp" + std::to_string(i) + "_w");
    fmlp_b_[i] = &store->get("fmlp" + std::to_string(i) + "_b");
    exts_w_[i] = &store->get("exts" + std::to_string(i) + "_w");
    exts_b_[i] = &store->get("exts" + std::to_string(i) + "_b");
    extw_w_[i] = &store->get("extw" + std::to_string(i) + "_w");
    extw_b_[i] = &store->get("extw" + std::to_string(i) + "_b");
  }
  auto fill_chain = [&](const char* name, std::size_t layers,
                        std::vector<const Param*>& w,
                        std::vector<const Param*>& b) {
    for (std::size_t i = 0; i < layers; ++i) {
      w.push_back(&store->get(std::string(name) + std::to_string(i) + "_w"));
      b.push_back(&store->get(std::string(name) + std::to_string(i) + "_b"));
    }
  };
  fill_chain("fuse", dims_.fusion_hidden.size() + 1, fuse_w_, fuse_b_);
  fill_chain("ctrl", dims_.controller_hidden.size() + 1, ctrl_w_, ctrl_b_);
  fill_chain("gmem", dims_.gmem_hidden.size() + 1, gmem_w_, gmem_b_);
  fill_chain("val", dims_.value_hidden.size() + 1, val_w_, val_b_);
  fill_chain("tval", dims_.value_hidden.size() + 1, tval_w_, tval_b_);
}

Agent::Bound Agent::bind(Tape& tape) const {
  Bound b;
  b.tape = &tape;
  b.vars.resize(store_->size());
  for (std::size_t i = 0; i < store_->size(); ++i)
    b.vars[i] = tape.param((*store_)[i]);
  return b;
}

Agent::Memory Agent::fresh_memory() const {
  Memory m;
  m.visual = Tensor({dims_.mem_slots, dims_.key});
  m.sentence = Tensor({dims_.mem_slots, dims_.embed});
  m.usage.assign(dims_.mem_slots, 0.0);
  return m;
}

Var Agent::initial_state(Bound& b) const {
  return b.tape->leaf(Tensor({dims_.state}));
}

Var Agent::mlp_chain(Bound& b, const std::vector<const Param*>& w,
                     const std::vector<const Param*>& bias, Var x,
                     const std::string& activations) const {
  Tape& t = *b.tape;
  Var h = x;
  for (std::size_t i = 0; i < w.size(); ++i) {
    h = t.affine(pvar(b, w[i]), h, pvar(b, bias[i]));
    switch (activations[i]) {
      case 'r': h = t.relu(h); break;
      case 't': h = t.tanh(h); break;
      case 's': h = t.sigmoid(h); break;
      case 'l': break;
      default: throw std::runtime_error("unknown activation code");
    }
  }
  return h;
}

Var Agent::gru_step(Bound& b, const Param* const cell[9], Var x, Var h) const {
  Tape& t = *b.tape;
  Var z = t.sigmoid(t.affine2(pvar(b, cell[0]), x, pvar(b, cell[1]), h,
                              pvar(b, cell[2])));
  Var r = t.sigmoid(t.affine2(pvar(b, cell[3]), x, pvar(b, cell[4]), h,
                              pvar(b, cell[5])));
  Var n = t.tanh(t.affine2(pvar(b, cell[6]), x, pvar(b, cell[7]),
                           t.hadamard(r, h), pvar(b, cell[8])));
  return t.add(t.hadamard(z, h), t.hadamard(t.one_minus(z), n));
}

Var Agent::input_proj(Bound& b, int token) const {
  Tape& t = *b.tape;
  Var e = t.embedding_lookup(pvar(b, embed_), token);
  Var x = t.relu(t.affine(pvar(b, inproj_w_[0]), e, pvar(b, inproj_b_[0])));
  x = t.relu(t.affine(pvar(b, inproj_w_[1]), x, pvar(b, inproj_b_[1])));
  return t.affine(pvar(b, inproj_w_[2]), x, pvar(b, inproj_b_[2]));
}

Var Agent::encode_image(Bound& b, const Tensor& image) const {
  Tape& t = *b.tape;
  if (image.rank() != 3 || image.shape[0] != dims_.image_size ||
      image.shape[1] != dims_.image_size || image.shape[2] != 3)
    throw std::runtime_error("encode_image: expected " +
                             std::to_string(dims_.image_size) + "x" +
                             std::to_string(dims_.image_size) +
                             "x3 image, got " + image.shape_str());
  Var x = t.leaf(image);
  for (std::size_t i = 0; i < conv_w_.size(); ++i) {
    x = t.relu(t.conv2d(x, pvar(b, conv_w_[i]), pvar(b, conv_b_[i])));
    x = t.maxpool2d(x, 3, 2);
  }
  x = t.flatten(x);
  for (std::size_t i = 0; i + 1 < enc_w_.size(); ++i)
    x = t.relu(t.affine(pvar(b, enc_w_[i]), x, pvar(b, enc_b_[i])));
  return t.affine(pvar(b, enc_w_.back()), x, pvar(b, enc_b_.back()));
}

Agent::Read Agent::memory_read(Bound& b, Var key, Var mv, Var ms) const {
  Tape& t = *b.tape;
  Read out;
  Var sims = t.cos_rows(mv, key);
  out.alpha = t.softmax(t.scale(sims, dims_.read_temp));
  out.r = t.tmatvec(ms, out.alpha);
  out.scores = t.matmul(pvar(b, embed_), out.r);
  out.conf = t.max_reduce(out.scores);
  return out;
}

Agent::Extract Agent::extract_content(Bound& b,
                                      const std::vector<int>& words) const {
  Tape& t = *b.tape;
  if (words.empty())
    throw std::runtime_error("extract_content: empty sentence");
  const int n = static_cast<int>(words.size());
  std::vector<Var> embeds(n);
  for (int i = 0; i < n; ++i)
    embeds[i] = t.embedding_lookup(pvar(b, embed_), words[i]);

  std::vector<Var> fwd(n), bwd(n);
  Var h = t.leaf(Tensor({dims_.extract_state}));
  for (int i = 0; i < n; ++i) h = fwd[i] = gru_step(b, extf_, embeds[i], h);
  h = t.leaf(Tensor({dims_.extract_state}));
  for (int i = n - 1; i >= 0; --i)
    h = bwd[i] = gru_step(b, extb_, embeds[i], h);

  // summary: last forward state with the backward state at the first word
  Var summary = t.concat({fwd[n - 1], bwd[0]});
  Var q = mlp_chain(b, {exts_w_[0], exts_w_[1]}, {exts_b_[0], exts_b_[1]},
                    summary, "lt");

  std::vector<Var> sims(n);
  for (int i = 0; i < n; ++i) {
    Var ctx = t.concat({embeds[i], fwd[i], bwd[i]});
    Var k = mlp_chain(b, {extw_w_[0], extw_w_[1]}, {extw_b_[0], extw_b_[1]},
                      ctx, "lt");
    sims[i] = t.cosine_similarity(q, k);
  }

  Extract out;
  out.eta = t.softmax(t.concat(sims));
  out.content = t.tmatvec(t.stack_rows(embeds), out.eta);
  // ReLU hidden layers, then linear layers, sigmoid output
  out.gate = t.sigmoid(mlp_chain(b, gmem_w_, gmem_b_, summary,
                                 "rr" + std::string(gmem_w_.size() - 2, 'l')));
  return out;
}

Agent::WordDist Agent::word_distribution(Bound& b, Var h, Var p_read,
                                         Var conf) const {
  Tape& t = *b.tape;
  Var f = t.relu(t.affine(pvar(b, fmlp_w_[0]), h, pvar(b, fmlp_b_[0])));
  f = t.affine(pvar(b, fmlp_w_[1]), f, pvar(b, fmlp_b_[1]));
  Var p_h = t.softmax(t.matmul(pvar(b, embed_), f));

  Var gate_in = t.concat({h, conf});
  Var g = mlp_chain(b, fuse_w_, fuse_b_, gate_in,
                    std::string(fuse_w_.size() - 1, 'r') + "s");

  WordDist out;
  out.gate = g;
  out.p = t.add(t.mul_vs(p_h, t.one_minus(g)), t.mul_vs(p_read, g));
  return out;
}

Agent::InterpretResult Agent::interpret_turn(
    Bound& b, Var h_prev, const std::vector<int>& teacher_tokens,
    const Tensor& image, Var mv, Var ms, std::vector<double>& usage,
    bool imitation_nll) const {
  Tape& t = *b.tape;
  InterpretResult out;

  Var key = encode_image(b, image);
  out.read_pre = memory_read(b, key, mv, ms);
  Var p_read = t.softmax(out.read_pre.scores);

  // consume the sentence, predicting every word (eos included) before it
  std::vector<int> tokens = teacher_tokens;
  if (tokens.empty()) tokens.push_back(vocab_->eos());
  Var h = h_prev;
  for (int tok : tokens) {
    if (imitation_nll) {
      WordDist d = word_distribution(b, h, p_read, out.read_pre.conf);
      out.word_nll.push_back(t.cross_entropy(d.p, tok));
    }
    h = gru_step(b, gru_, input_proj(b, tok), h);
  }
  out.h = h;

  // write extracted content; silence writes nothing
  std::vector<int> content;
  for (int tok : teacher_tokens)
    if (tok != vocab_->eos() && tok != vocab_->pad()) content.push_back(tok);

  const auto& alpha = t.val(out.read_pre.alpha).v;
  for (int i = 0; i < dims_.mem_slots; ++i)
    usage[i] = dims_.usage_decay * usage[i] + alpha[i];

  out.gate_mem = -1;
  out.eta = -1;
  if (!content.empty()) {
    Extract ext = extract_content(b, content);
    out.gate_mem = ext.gate;
    out.eta = ext.eta;
    const int slot = lru_slot(usage);
    out.write_slot = slot;
    out.mv = t.memory_write(mv, key, ext.gate, slot);
    out.ms = t.memory_write(ms, ext.content, ext.gate, slot);
    usage[slot] += t.scalar_val(ext.gate);
  } else {
    out.mv = mv;
    out.ms = ms;
  }

  out.read_post = memory_read(b, key, out.mv, out.ms);
  return out;
}

int Agent::lru_slot(const std::vector<double>& usage) const {
  return static_cast<int>(std::min_element(usage.begin(), usage.end()) -
                          usage.begin());
}

Var Agent::control_state(Bound& b, Var h, Var conf) const {
  Tape& t = *b.tape;
  Var ctrl_in = t.concat({h, conf});
  Var f = mlp_chain(b, ctrl_w_, ctrl_b_, ctrl_in,
                    std::string(ctrl_w_.size() - 1, 'r') + "l");
  return t.add(h, f);
}

Agent::SpeakResult Agent::speak_turn(Bound& b, Var h, Var conf, Var r,
                                     Decode mode, Rng* rng,
                                     const std::vector<int>* forced) const {
  Var control = control_state(b, h, conf);
  return speak_from(b, control, control, conf, r, mode, rng, forced);
}

Agent::SpeakResult Agent::speak_from(Bound& b, Var start, Var control,
                                     Var conf, Var r, Decode mode, Rng* rng,
                                     const std::vector<int>* forced) const {
  Tape& t = *b.tape;
  SpeakResult out;
  out.control = control;
  Var state = start;
  Var p_read = t.softmax(t.matmul(pvar(b, embed_), r));

  const int cap = forced ? static_cast<int>(forced->size()) : dims_.max_len;
  for (int i = 0; i < cap; ++i) {
    WordDist d = word_distribution(b, state, p_read, conf);
    int tok;
    if (forced) {
      tok = (*forced)[i];
    } else if (mode == Decode::greedy) {
      const auto& p = t.val(d.p).v;
      tok = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      const auto& p = t.val(d.p).v;
      double u = rng->uniform();
      tok = static_cast<int>(p.size()) - 1;
      double acc = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        acc += p[k];
        if (u < acc) {
          tok = static_cast<int>(k);
          break;
        }
      }
    }
    out.tokens.push_back(tok);
    out.word_nll.push_back(t.cross_entropy(d.p, tok));
    out.gates.push_back(t.scalar_val(d.gate));
    state = gru_step(b, gru_, input_proj(b, tok), state);
    if (tok == vocab_->eos()) break;
  }
  out.h_last = state;
  return out;
}

Var Agent::value_estimate(Bound& b, Var h, Var conf, bool target_net) const {
  Tape& t = *b.tape;
  Var x = t.concat({t.stop_gradient(h), t.stop_gradient(conf)});
  const auto& w = target_net ? tval_w_ : val_w_;
  const auto& bias = target_net ? tval_b_ : val_b_;
  return mlp_chain(b, w, bias, x,
                   std::string(w.size() - 1, 'r') + "l");
}

void Agent::sync_target(ParamStore& store) const {
  for (std::size_t i = 0; i < val_w_.size(); ++i) {
    store.get(tval_w_[i]->name).value = val_w_[i]->value;
    store.get(tval_b_[i]->name).value = val_b_[i]->value;
  }
}

}  // namespace lingo
