#include "supnerf/nets.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

#include "supnerf/errors.hpp"

namespace supnerf {

using nlohmann::json;

// ----------------------------------------------------------------- ParamStore

Parameter& ParamStore::create(const std::string& name, Tensor init) {
  if (index_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor::zeros(init.shape());
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

void ParamStore::zero_grads() {
  for (auto& p : params_)
    std::fill(p->grad.vec().begin(), p->grad.vec().end(), 0.0);
}

std::int64_t ParamStore::total_scalars() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

// ---------------------------------------------------------------- ParamBinder

Var ParamBinder::operator()(Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(p.value, trainable_);
  bound_.emplace(&p, v);
  return v;
}

void ParamBinder::accumulate_grads(double scale) {
  for (auto& [param, var] : bound_) {
    Tensor g = tape_.grad(var);
    double* dst = param->grad.data();
    const double* src = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += scale * src[i];
  }
}

// ------------------------------------------------------------------ NetConfig

std::string NetConfig::to_json() const {
  json j;
  j["latent"] = latent;
  j["image_size"] = image_size;
  j["enc_widths"] = enc_widths;
  j["pe_freqs"] = pe_freqs;
  j["dec_trunk_depth"] = dec_trunk_depth;
  j["dec_color_depth"] = dec_color_depth;
  j["shortcut"] = shortcut;
  j["mlp_direct_head"] = mlp_direct_head;
  j["rot_update_max"] = rot_update_max;
  j["trans_update_max"] = trans_update_max;
  j["log_rho_max"] = log_rho_max;
  return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  NetConfig c;
  c.latent = j.at("latent");
  c.image_size = j.at("image_size");
  c.enc_widths = j.at("enc_widths").get<std::vector<int>>();
  c.pe_freqs = j.at("pe_freqs");
  c.dec_trunk_depth = j.at("dec_trunk_depth");
  c.dec_color_depth = j.at("dec_color_depth");
  c.shortcut = j.at("shortcut");
  c.mlp_direct_head = j.at("mlp_direct_head");
  c.rot_update_max = j.at("rot_update_max");
  c.trans_update_max = j.at("trans_update_max");
  c.log_rho_max = j.at("log_rho_max");
  return c;
}

void NetConfig::check_compatible(const NetConfig& other) const {
  std::string bad;
  auto differs = [&bad](const std::string& field, auto a, auto b) {
    if (a != b) bad += (bad.empty() ? "" : ", ") + field;
  };
  differs("latent", latent, other.latent);
  differs("image_size", image_size, other.image_size);
  differs("enc_widths", enc_widths, other.enc_widths);
  differs("pe_freqs", pe_freqs, other.pe_freqs);
  differs("dec_trunk_depth", dec_trunk_depth, other.dec_trunk_depth);
  differs("dec_color_depth", dec_color_depth, other.dec_color_depth);
  differs("shortcut", shortcut, other.shortcut);
  differs("mlp_direct_head", mlp_direct_head, other.mlp_direct_head);
  differs("rot_update_max", rot_update_max, other.rot_update_max);
  differs("trans_update_max", trans_update_max, other.trans_update_max);
  differs("log_rho_max", log_rho_max, other.log_rho_max);
  if (!bad.empty())
    throw ConfigMismatchError("network config mismatch in fields: " + bad);
}

// --------------------------------------------------------------- SupNerfModel

namespace {

Tensor init_linear(std::int64_t in, std::int64_t out, Rng& rng) {
  Tensor w({in, out});
  double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-a, a);
  return w;
}

// Whole-tensor RMS normalization; parameter free.
Var rms_norm(Tape& t, Var x) {
  Var ms = t.mean(t.mul(x, x));
  Var denom = t.sqrt_op(t.add_const(ms, 1e-6));
  return t.div(x, t.broadcast(denom, t.value(x).shape()));
}

}  // namespace

SupNerfModel::SupNerfModel(NetConfig cfg) : cfg_(std::move(cfg)) {}

void SupNerfModel::init_params(std::uint64_t seed) {
  Rng rng(seed ^ 0x5e74c0defull);
  auto lin = [&](const std::string& name, std::int64_t in, std::int64_t out) {
    params_.create(name + ".w", init_linear(in, out, rng));
    params_.create(name + ".b", Tensor::zeros({out}));
  };
  auto conv = [&](const std::string& name, std::int64_t in, std::int64_t out) {
    params_.create(name + ".w", init_linear(in * 9, out, rng));
    params_.create(name + ".b", Tensor::zeros({out}));
  };

  const auto& w = cfg_.enc_widths;
  conv("enc.b1", 4, w[0]);
  conv("enc.b2", w[0], w[1]);
  conv("enc.b3", w[1], w[2]);
  conv("enc.b4p", w[2], w[3]);
  conv("enc.b4s", w[2], w[3]);
  conv("enc.b5p", w[3], w[4]);
  conv("enc.b5s", w[3], w[4]);
  const int L = cfg_.latent;
  lin("enc.head_pose", w[4], L);
  lin("enc.head_shape", w[4], L);
  lin("enc.head_texture", w[4], L);
  lin("enc.head_dims", w[4], 3);
  lin("enc.head_corners", L, 16);

  // Density trunk: PE + shape code in, latent-wide hidden layers.
  int pe_dim = 6 * cfg_.pe_freqs;
  lin("dec.trunk0", pe_dim + L, L);
  for (int i = 1; i < cfg_.dec_trunk_depth; ++i)
    lin("dec.trunk" + std::to_string(i), L, L);
  lin("dec.sigma", L, 1);
  lin("dec.color0", 2 * L, L);
  for (int i = 1; i < cfg_.dec_color_depth; ++i)
    lin("dec.color" + std::to_string(i), L, L);
  lin("dec.rgb", L, 3);

  lin("box.l0", 16, L);
  lin("box.l1", L, L);
  lin("refine.trunk0", 2 * L, L);
  lin("refine.trunk1", L, L);
  lin("refine.dq", L, 3);
  lin("refine.dv", L, 2);
  lin("refine.rho", L, 1);

  if (cfg_.mlp_direct_head) {
    lin("direct.l0", L, L);
    lin("direct.out", L, 6);
  }
}

Var SupNerfModel::linear(ParamBinder& bind, const std::string& name,
                         Var x) const {
  Tape& t = bind.tape();
  Var w = bind(params_.get(name + ".w"));
  Var b = bind(params_.get(name + ".b"));
  Var y = t.matmul(x, w);
  return t.add(y, t.broadcast(b, t.value(y).shape()));
}

Var SupNerfModel::conv_block(ParamBinder& bind, const std::string& name, Var x,
                             std::int64_t in_c, std::int64_t out_c,
                             std::int64_t hw) const {
  Tape& t = bind.tape();
  std::int64_t out_hw = hw / 2;
  Var cols = t.im2col(x, 3, 2, 1);  // (in_c*9, out_hw^2)
  Var w = bind(params_.get(name + ".w"));
  Var b = bind(params_.get(name + ".b"));
  Var y = t.matmul(t.transpose(w), cols);  // (out_c, out_hw^2)
  y = t.add(y, t.broadcast(t.reshape(b, {out_c, 1}), {out_c, out_hw * out_hw}));
  y = rms_norm(t, t.relu(y));
  return t.reshape(y, {out_c, out_hw, out_hw});
}

EncoderOut SupNerfModel::encoder_forward(ParamBinder& bind, const Tensor& image,
                                         const Tensor& mask,
                                         EncoderTaps* taps) const {
  Tape& t = bind.tape();
  const std::int64_t S = cfg_.image_size;
  if (image.shape() != std::vector<std::int64_t>{3, S, S} ||
      mask.shape() != std::vector<std::int64_t>{1, S, S})
    throw ShapeError("encoder_forward: expected (3," + std::to_string(S) + "," +
                     std::to_string(S) + ") image and (1,...) mask, got " +
                     Tensor::shape_str(image.shape()) + " / " +
                     Tensor::shape_str(mask.shape()));

  Tensor stacked({4, S, S});
  std::memcpy(stacked.data(), image.data(), sizeof(double) * image.numel());
  std::memcpy(stacked.data() + image.numel(), mask.data(),
              sizeof(double) * mask.numel());
  Var x = t.constant(std::move(stacked));

  const auto& w = cfg_.enc_widths;
  Var h1 = conv_block(bind, "enc.b1", x, 4, w[0], S);
  Var h2 = conv_block(bind, "enc.b2", h1, w[0], w[1], S / 2);
  Var h3 = conv_block(bind, "enc.b3", h2, w[1], w[2], S / 4);

  Var pose4 = conv_block(bind, "enc.b4p", h3, w[2], w[3], S / 8);
  Var st4_raw = conv_block(bind, "enc.b4s", h3, w[2], w[3], S / 8);
  // Cross-task shortcut: shape/texture features shed their pose content.
  Var st4 = cfg_.shortcut ? t.sub(st4_raw, pose4) : st4_raw;
  if (taps) *taps = EncoderTaps{pose4, st4_raw, st4};

  Var pose5 = conv_block(bind, "enc.b5p", pose4, w[3], w[4], S / 16);
  Var st5 = conv_block(bind, "enc.b5s", st4, w[3], w[4], S / 16);

  std::int64_t area = (S / 32) * (S / 32);
  auto gap = [&](Var v) {
    Var flat = t.reshape(v, {w[4], area});
    return t.reshape(t.mul_const(t.sum_axis(flat, 1), 1.0 / area), {1, w[4]});
  };
  Var f_pose = gap(pose5);
  Var f_st = gap(st5);

  EncoderOut out;
  const int L = cfg_.latent;
  out.pose_code = t.reshape(linear(bind, "enc.head_pose", f_pose), {L});
  out.shape_code = t.reshape(linear(bind, "enc.head_shape", f_st), {L});
  out.texture_code = t.reshape(linear(bind, "enc.head_texture", f_st), {L});
  out.dims = t.softplus(t.reshape(linear(bind, "enc.head_dims", f_st), {3}));
  out.corners_direct = t.reshape(
      linear(bind, "enc.head_corners", t.reshape(out.pose_code, {1, L})), {16});
  return out;
}

Var positional_encoding(Tape& t, Var x_n, int freqs) {
  std::vector<Var> parts;
  parts.reserve(2 * freqs);
  double scale = 1.0;
  for (int k = 0; k < freqs; ++k) {
    Var s = t.mul_const(x_n, scale);
    parts.push_back(t.sin_op(s));
    parts.push_back(t.cos_op(s));
    scale *= 2.0;
  }
  return t.concat(parts, 1);
}

std::pair<Var, Var> SupNerfModel::nerf_decode(ParamBinder& bind, Var x_n,
                                              Var shape_code,
                                              Var texture_code) const {
  Tape& t = bind.tape();
  const Tensor& vx = t.value(x_n);
  if (vx.rank() != 2 || vx.extent(1) != 3)
    throw ShapeError("nerf_decode: expected (N,3) points, got " +
                     Tensor::shape_str(vx.shape()));
  std::int64_t n = vx.extent(0);
  const int L = cfg_.latent;

  Var pe = positional_encoding(t, x_n, cfg_.pe_freqs);
  Var shape_b = t.broadcast(shape_code, {n, L});
  Var h = t.concat({pe, shape_b}, 1);
  for (int i = 0; i < cfg_.dec_trunk_depth; ++i)
    h = t.relu(linear(bind, "dec.trunk" + std::to_string(i), h));
  Var sigma = t.reshape(
      t.clamp_max(t.softplus(linear(bind, "dec.sigma", h)), 1e4), {n});

  Var tex_b = t.broadcast(texture_code, {n, L});
  Var c = t.concat({h, tex_b}, 1);
  for (int i = 0; i < cfg_.dec_color_depth; ++i)
    c = t.relu(linear(bind, "dec.color" + std::to_string(i), c));
  Var rgb = t.sigmoid(linear(bind, "dec.rgb", c));
  return {sigma, rgb};
}

Var SupNerfModel::encode_box(ParamBinder& bind, Var corners_norm) const {
  Tape& t = bind.tape();
  Var x = t.reshape(corners_norm, {1, 16});
  Var h = t.relu(linear(bind, "box.l0", x));
  return t.reshape(linear(bind, "box.l1", h), {cfg_.latent});
}

SupNerfModel::Update SupNerfModel::refiner_forward(ParamBinder& bind,
                                                   Var pose_code,
                                                   Var box_code) const {
  Tape& t = bind.tape();
  const int L = cfg_.latent;
  Var x = t.reshape(t.concat({pose_code, box_code}, 0), {1, 2 * L});
  Var h = t.relu(linear(bind, "refine.trunk0", x));
  h = t.relu(linear(bind, "refine.trunk1", h));
  Update u;
  u.dq = t.mul_const(t.tanh_op(t.reshape(linear(bind, "refine.dq", h), {3})),
                     cfg_.rot_update_max);
  u.dv = t.mul_const(t.tanh_op(t.reshape(linear(bind, "refine.dv", h), {2})),
                     cfg_.trans_update_max);
  Var raw = t.reshape(linear(bind, "refine.rho", h), {1});
  u.rho = t.exp_op(
      t.clamp_max(t.clamp_min(raw, -cfg_.log_rho_max), cfg_.log_rho_max));
  return u;
}

Var SupNerfModel::mlp_direct_forward(ParamBinder& bind, Var pose_code) const {
  if (!cfg_.mlp_direct_head)
    throw std::invalid_argument("mlp_direct head disabled in config");
  Tape& t = bind.tape();
  Var x = t.reshape(pose_code, {1, cfg_.latent});
  Var h = t.relu(linear(bind, "direct.l0", x));
  return t.reshape(linear(bind, "direct.out", h), {6});
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'U', 'P', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CorruptFileError(std::string("checkpoint: truncated ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(config_json.size()));
  os.write(config_json.data(), config_json.size());
  write_pod(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params.at(i);
    write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), p.name.size());
    write_pod(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::int64_t e : p.value.shape())
      write_pod(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             sizeof(double) * p.value.numel());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::string load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptFileError("checkpoint: bad magic in " + path);
  auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw CorruptFileError("checkpoint: unsupported version " +
                           std::to_string(version));
  auto json_len = read_pod<std::uint64_t>(is, "config length");
  std::string config(json_len, '\0');
  is.read(config.data(), json_len);
  if (!is) throw CorruptFileError("checkpoint: truncated config echo");

  auto count = read_pod<std::uint32_t>(is, "tensor count");
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    auto name_len = read_pod<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CorruptFileError("checkpoint: truncated tensor name");
    if (!params.has(name))
      throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    auto rank = read_pod<std::uint32_t>(is, "rank");
    std::vector<std::int64_t> shape(rank);
    for (auto& e : shape)
      e = static_cast<std::int64_t>(read_pod<std::uint64_t>(is, "extent"));
    Parameter& p = params.get(name);
    if (shape != p.value.shape())
      throw ShapeError("checkpoint: tensor '" + name + "' has shape " +
                       Tensor::shape_str(shape) + ", expected " +
                       Tensor::shape_str(p.value.shape()));
    Tensor value(shape);
    is.read(reinterpret_cast<char*>(value.data()),
            sizeof(double) * value.numel());
    if (!is)
      throw CorruptFileError("checkpoint: truncated payload for '" + name +
                             "'");
    p.value = std::move(value);
    for (std::size_t i = 0; i < params.size(); ++i)
      if (&params.at(i) == &p) seen[i] = true;
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!seen[i])
      throw std::runtime_error("checkpoint: missing tensor '" +
                               params.at(i).name + "'");
  return config;
}

}  // namespace supnerf
