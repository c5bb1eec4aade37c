#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lingo/rng.hpp"
#include "lingo/tape.hpp"
#include "lingo/tensor.hpp"
#include "lingo/vocab.hpp"

namespace lingo {

// Network dimensions. The desk profile keeps the architecture of the paper
// profile at a fraction of the width so full training fits on a CPU.
struct AgentDims {
  int embed = 32;   // word embedding d
  int state = 64;   // shared recurrent state
  int key = 64;     // visual key
  int mem_slots = 10;
  double read_temp = 10.0;   // sharpening for read attention
  double usage_decay = 0.99;  // LRUA usage decay
  int image_size = 16;
  std::vector<int> conv_channels = {8, 16};
  std::vector<int> enc_fc = {64};  // hidden FC dims; key-size output follows
  std::vector<int> controller_hidden = {64, 64};
  std::vector<int> fusion_hidden = {50, 10};
  std::vector<int> gmem_hidden = {50, 30, 20};
  std::vector<int> value_hidden = {64, 32};
  int extract_state = 64;  // bidirectional summary cell
  int extract_out = 64;    // attention MLP outputs
  int fmlp_hidden = 64;    // state-to-embedding bridge hidden width
  int max_len = 6;         // speaker length cap

  static AgentDims desk();
  static AgentDims paper();
};

// Interpreter/speaker network with multimodal external memory. Parameters
// live in a ParamStore; per-episode computation happens on a Tape through a
// Bound view. The interpreter and speaker share one recurrent cell.
class Agent {
 public:
  Agent(const AgentDims& dims, const Vocabulary* vocab, ParamStore* store);

  // Creates all parameters (idempotent layout; call once on a fresh store).
  static void init_params(const AgentDims& dims, const Vocabulary& vocab,
                          ParamStore& store, Rng& rng);

  struct Bound {
    Tape* tape = nullptr;
    std::vector<Var> vars;  // param id -> leaf var
  };
  Bound bind(Tape& tape) const;

  // episode-local memory, zero-initialized
  struct Memory {
    Tensor visual;    // {slots, key}, slots are rows
    Tensor sentence;  // {slots, embed}
    std::vector<double> usage;
  };
  Memory fresh_memory() const;

  Var initial_state(Bound& b) const;  // zero hidden state
  Var encode_image(Bound& b, const Tensor& image) const;

  struct Read {
    Var alpha;   // softmax(temp * cos(key, slots))
    Var r;       // sentence readout
    Var scores;  // embedding-table match scores E r
    Var conf;    // max score
  };
  Read memory_read(Bound& b, Var key, Var mv, Var ms) const;

  struct Extract {
    Var content;  // attention-weighted word embedding sum
    Var eta;      // word attention
    Var gate;     // content importance
  };
  Extract extract_content(Bound& b, const std::vector<int>& words) const;

  struct WordDist {
    Var p;     // fused distribution over the vocabulary
    Var gate;  // fusion gate value
  };
  WordDist word_distribution(Bound& b, Var h, Var p_read, Var conf) const;

  struct InterpretResult {
    Var h;           // state after the teacher's sentence
    Var mv, ms;      // memory after this turn's write
    Read read_pre;   // read used while interpreting (before the write)
    Read read_post;  // read used by the speaker (after the write)
    std::vector<Var> word_nll;  // per teacher word, <eos> included
    Var gate_mem;               // content importance (-1 if silent turn)
    Var eta;                    // word attention (-1 if silent turn)
    int write_slot = -1;
  };
  // `imitation_nll=false` skips the predictive word losses (pure RL mode)
  InterpretResult interpret_turn(Bound& b, Var h_prev,
                                 const std::vector<int>& teacher_tokens,
                                 const Tensor& image, Var mv, Var ms,
                                 std::vector<double>& usage,
                                 bool imitation_nll = true) const;

  enum class Decode { sample, greedy, forced };
  struct SpeakResult {
    std::vector<int> tokens;    // emitted words, <eos> included if produced
    std::vector<Var> word_nll;  // -log p of each emitted word
    std::vector<double> gates;  // fusion gate per word
    Var h_last;                 // speaker state for the next turn
    Var control;                // h + f(h, c)
  };
  // residual controller output, the speaker's initial state
  Var control_state(Bound& b, Var h, Var conf) const;
  // decode starting from an explicit state (a control state or a noisy copy
  // of one for the latent Gaussian policy); `control` is echoed in the result
  SpeakResult speak_from(Bound& b, Var start, Var control, Var conf, Var r,
                         Decode mode, Rng* rng,
                         const std::vector<int>* forced) const;
  SpeakResult speak_turn(Bound& b, Var h, Var conf, Var r, Decode mode,
                         Rng* rng, const std::vector<int>* forced) const;

  Var value_estimate(Bound& b, Var h, Var conf, bool target_net) const;
  void sync_target(ParamStore& store) const;

  const AgentDims& dims() const { return dims_; }
  const Vocabulary& vocab() const { return *vocab_; }
  int lru_slot(const std::vector<double>& usage) const;

 private:
  Var pvar(Bound& b, const Param* p) const { return b.vars[p->id]; }
  Var gru_step(Bound& b, const Param* const cell[9], Var x, Var h) const;
  Var input_proj(Bound& b, int token) const;
  Var mlp_chain(Bound& b, const std::vector<const Param*>& w,
                const std::vector<const Param*>& bias, Var x,
                const std::string& activations) const;

  AgentDims dims_;
  const Vocabulary* vocab_;
  ParamStore* store_;
  // resolved parameter pointers, see agent.cpp
  const Param* embed_ = nullptr;
  std::vector<const Param*> conv_w_, conv_b_, enc_w_, enc_b_;
  const Param* inproj_w_[3] = {};
  const Param* inproj_b_[3] = {};
  const Param* gru_[9] = {};
  const Param* extf_[9] = {};
  const Param* extb_[9] = {};
  const Param* fmlp_w_[2] = {};
  const Param* fmlp_b_[2] = {};
  const Param* exts_w_[2] = {};
  const Param* exts_b_[2] = {};
  const Param* extw_w_[2] = {};
  const Param* extw_b_[2] = {};
  std::vector<const Param*> fuse_w_, fuse_b_, ctrl_w_, ctrl_b_, gmem_w_,
      gmem_b_, val_w_, val_b_, tval_w_, tval_b_;
};

}  // namespace lingo
