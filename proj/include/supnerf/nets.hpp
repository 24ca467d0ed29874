#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "supnerf/rng.hpp"
#include "supnerf/tape.hpp"
#include "supnerf/tensor.hpp"

namespace supnerf {

// Named trainable tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered parameter registry. Creation order is the serialization order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grads();
  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }
  std::int64_t total_scalars() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

// Per-tape binding of parameters to leaf vars. `trainable` controls whether
// the leaves request gradients (frozen-weight passes skip the weight-grad
// GEMMs entirely).
class ParamBinder {
 public:
  ParamBinder(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var operator()(Parameter& p);

  // param.grad += scale * d(loss)/d(param) for every bound parameter.
  void accumulate_grads(double scale = 1.0);

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<Parameter*, Var> bound_;
};

struct NetConfig {
  int latent = 256;
  int image_size = 128;
  std::vector<int> enc_widths = {16, 32, 64, 128, 256};
  int pe_freqs = 8;
  int dec_trunk_depth = 4;
  int dec_color_depth = 2;
  bool shortcut = true;
  bool mlp_direct_head = true;
  // Per-iteration refiner update bounds.
  double rot_update_max = 1.2;    // radians, tanh-bounded
  double trans_update_max = 32.0; // pixels, tanh-bounded
  double log_rho_max = 1.0;       // depth ratio = exp(clamped raw)

  std::string to_json() const;
  static NetConfig from_json(const std::string& json);
  // Throws ConfigMismatchError listing differing fields.
  void check_compatible(const NetConfig& other) const;
};

// Encoder outputs, all on the tape.
struct EncoderOut {
  Var pose_code;       // (latent)
  Var shape_code;      // (latent)
  Var texture_code;    // (latent)
  Var dims;            // (3) = (h, w, l), softplus-positive
  Var corners_direct;  // (16), normalized patch coordinates (u0,v0,...)
};

// Block-4 features around the cross-task shortcut, for inspection.
struct EncoderTaps {
  Var pose4;
  Var st4_raw;    // shape/texture branch before the subtraction
  Var st4_after;  // what block 5 actually consumes
};

// The unified network: shared-encoder backbone, conditional NeRF decoder,
// box encoder + iterative pose refiner, and the direct-pose ablation head.
class SupNerfModel {
 public:
  explicit SupNerfModel(NetConfig cfg);

  void init_params(std::uint64_t seed);

  // image: (3,S,S) in [0,1]; mask: (1,S,S) in {0, 0.5, 1}.
  EncoderOut encoder_forward(ParamBinder& bind, const Tensor& image,
                             const Tensor& mask,
                             EncoderTaps* taps = nullptr) const;

  // x_n: (N,3) normalized object-frame points; codes: (latent).
  // Returns sigma (N) in [0, 1e4] and rgb (N,3) in [0,1].
  std::pair<Var, Var> nerf_decode(ParamBinder& bind, Var x_n, Var shape_code,
                                  Var texture_code) const;

  // corners_norm: (16) roi-normalized corner coordinates.
  Var encode_box(ParamBinder& bind, Var corners_norm) const;

  // Returns the bounded update heads: dq (3) in [-rot_max, rot_max],
  // dv (2) pixels in [-trans_max, trans_max], rho (1) positive.
  struct Update {
    Var dq;
    Var dv;
    Var rho;
  };
  Update refiner_forward(ParamBinder& bind, Var pose_code, Var box_code) const;

  // Direct one-shot pose head: (6) = (q0,q1,q2, u_norm, v_norm, log_z).
  Var mlp_direct_forward(ParamBinder& bind, Var pose_code) const;

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  Var conv_block(ParamBinder& bind, const std::string& name, Var x,
                 std::int64_t in_c, std::int64_t out_c, std::int64_t hw) const;
  Var linear(ParamBinder& bind, const std::string& name, Var x) const;

  NetConfig cfg_;
  mutable ParamStore params_;
};

// Positional encoding with frequencies 2^0..2^(freqs-1), sin and cos.
Var positional_encoding(Tape& tape, Var x_n, int freqs);

// Checkpoint file: magic "SUPN", u32 version, UTF-8 JSON config echo, then
// per-tensor records (length-prefixed name, shape, little-endian f64).
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json);
// Loads into an existing store; every name must match an existing parameter
// of identical shape and every parameter must be present. Returns the
// embedded config JSON.
std::string load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace supnerf
