#include "fewloc/classifier.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fewloc/errors.hpp"
#include "fewloc/rng.hpp"

namespace fewloc {
namespace {

void layer_norm(const double* x, const double* gain, const double* bias,
                std::size_t h, double eps, double* out, double* xhat,
                double& inv) {
  double mu = 0.0;
  for (std::size_t i = 0; i < h; ++i) mu += x[i];
  mu /= double(h);
  double var = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    const double d = x[i] - mu;
    var += d * d;
  }
  var /= double(h);
  inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < h; ++i) {
    xhat[i] = (x[i] - mu) * inv;
    out[i] = gain[i] * xhat[i] + bias[i];
  }
}

void layer_norm_backward(const double* dout, const double* gain,
                         const double* xhat, double inv, std::size_t h,
                         double* dgain_acc, double* dbias_acc, double* dx) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    dgain_acc[i] += dout[i] * xhat[i];
    dbias_acc[i] += dout[i];
    const double dxh = dout[i] * gain[i];
    m1 += dxh;
    m2 += dxh * xhat[i];
  }
  m1 /= double(h);
  m2 /= double(h);
  for (std::size_t i = 0; i < h; ++i) {
    const double dxh = dout[i] * gain[i];
    dx[i] = inv * (dxh - m1 - xhat[i] * m2);
  }
}

void softmax(const double* logits, double* probs, std::size_t m) {
  double mx = logits[0];
  for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (std::size_t i = 0; i < m; ++i) probs[i] /= sum;
}

// A two-layer block: affine -> layer norm -> relu -> affine.
struct Mlp2View {
  const double *w1, *b1, *ln_g, *ln_b, *w2, *b2;
  std::size_t in = 0, hid = 0, out = 0;
};

struct Mlp2Grad {
  double *w1, *b1, *ln_g, *ln_b, *w2, *b2;
};

struct Mlp2Work {
  std::vector<double> pre, xhat, postln, hidact, out;
  double inv = 0.0;
  void resize(const Mlp2View& m) {
    pre.resize(m.hid);
    xhat.resize(m.hid);
    postln.resize(m.hid);
    hidact.resize(m.hid);
    out.resize(m.out);
  }
};

void mlp2_forward(const Mlp2View& m, const double* in, double ln_eps,
                  Mlp2Work& w) {
  const auto& ops = kernels::active();
  ops.matvec(m.w1, in, m.b1, w.pre.data(), m.hid, m.in);
  layer_norm(w.pre.data(), m.ln_g, m.ln_b, m.hid, ln_eps, w.postln.data(),
             w.xhat.data(), w.inv);
  ops.relu(w.postln.data(), w.hidact.data(), m.hid);
  ops.matvec(m.w2, w.hidact.data(), m.b2, w.out.data(), m.out, m.hid);
}

struct Mlp2Scratch {
  std::vector<double> dhid, dpost, dpre;
};

// dout is the gradient w.r.t. the raw second-affine output. din, when
// non-null, receives W1^T dpre (zeroed here first).
void mlp2_backward(const Mlp2View& m, const Mlp2Grad& g, const double* in,
                   const Mlp2Work& w, const double* dout, double* din,
                   Mlp2Scratch& s) {
  const auto& ops = kernels::active();
  ops.outer_acc(dout, w.hidact.data(), g.w2, m.out, m.hid);
  ops.axpy(1.0, dout, g.b2, m.out);
  s.dhid.assign(m.hid, 0.0);
  ops.matvec_t_acc(m.w2, dout, s.dhid.data(), m.out, m.hid);
  s.dpost.resize(m.hid);
  ops.relu_backward(w.postln.data(), s.dhid.data(), s.dpost.data(), m.hid);
  s.dpre.resize(m.hid);
  layer_norm_backward(s.dpost.data(), m.ln_g, w.xhat.data(), w.inv, m.hid,
                      g.ln_g, g.ln_b, s.dpre.data());
  ops.outer_acc(s.dpre.data(), in, g.w1, m.hid, m.in);
  ops.axpy(1.0, s.dpre.data(), g.b1, m.hid);
  if (din) {
    std::fill(din, din + m.in, 0.0);
    ops.matvec_t_acc(m.w1, s.dpre.data(), din, m.hid, m.in);
  }
}

}  // namespace

// --- ClassifierParams ---------------------------------------------------------

void ClassifierParams::build_layout() {
  const uint32_t D = cfg_.dim;
  const uint32_t h = cfg_.hidden;
  const uint32_t m = cfg_.classes;
  const uint32_t H = cfg_.hyper_width();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    tensors_.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  for (uint32_t l = 0; l < cfg_.levels; ++l) {
    const std::string p = "L" + std::to_string(l);
    add(p + ".head.w1", h, D);
    add(p + ".head.b1", h, 1);
    add(p + ".head.ln_g", h, 1);
    add(p + ".head.ln_b", h, 1);
    add(p + ".head.w2", m, h);
    add(p + ".head.b2", m, 1);
    if (l >= 1) {
      const std::size_t hin = std::size_t(l) * m;
      for (const char* branch : {"gamma", "beta"}) {
        const std::string b = p + "." + branch;
        add(b + ".w1", H, hin);
        add(b + ".b1", H, 1);
        add(b + ".ln_g", H, 1);
        add(b + ".ln_b", H, 1);
        add(b + ".w2", D, H);
        add(b + ".b2", D, 1);
      }
    }
  }
  data_.assign(offset, 0.0);
}

ClassifierParams::ClassifierParams(const ClassifierConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  if (cfg.dim == 0 || cfg.hidden == 0 || cfg.classes == 0 || cfg.levels == 0)
    throw DataError("classifier config: all dimensions must be positive");
  build_layout();
  Rng rng(seed);
  for (const auto& t : tensors_) {
    double* p = data_.data() + t.offset;
    const bool is_w1 = t.name.ends_with(".w1");
    const bool is_gain = t.name.ends_with(".ln_g");
    if (is_w1) {
      // Hidden weights get Glorot-uniform init; output layers stay zero so
      // the initial prediction is uniform and the initial modulation is the
      // identity (gamma = 1 + 0).
      const double limit = std::sqrt(6.0 / double(t.rows + t.cols));
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(-limit, limit);
    } else if (is_gain) {
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = 1.0;
    }
  }
}

std::size_t ClassifierParams::tensor_index(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  throw DataError("unknown tensor: " + name);
}

namespace {

Mlp2View make_view(const ClassifierParams& params, const std::string& prefix,
                   std::size_t in, std::size_t hid, std::size_t out) {
  Mlp2View v;
  v.w1 = params.tensor(params.tensor_index(prefix + ".w1"));
  v.b1 = params.tensor(params.tensor_index(prefix + ".b1"));
  v.ln_g = params.tensor(params.tensor_index(prefix + ".ln_g"));
  v.ln_b = params.tensor(params.tensor_index(prefix + ".ln_b"));
  v.w2 = params.tensor(params.tensor_index(prefix + ".w2"));
  v.b2 = params.tensor(params.tensor_index(prefix + ".b2"));
  v.in = in;
  v.hid = hid;
  v.out = out;
  return v;
}

Mlp2Grad make_grad(const ClassifierParams& params, std::vector<double>& grad,
                   const std::string& prefix) {
  auto at = [&](const std::string& name) {
    return grad.data() + params.tensors()[params.tensor_index(name)].offset;
  };
  return {at(prefix + ".w1"),   at(prefix + ".b1"), at(prefix + ".ln_g"),
          at(prefix + ".ln_b"), at(prefix + ".w2"), at(prefix + ".b2")};
}

void validate_batch(const ClassifierParams& params, const DescriptorMap& desc,
                    const std::vector<RegionLabel>* labels) {
  const auto& cfg = params.config();
  if (desc.dim != cfg.dim)
    throw DataError("descriptor dim " + std::to_string(desc.dim) +
                    " does not match classifier dim " +
                    std::to_string(cfg.dim));
  if (labels) {
    if (labels->size() != desc.count())
      throw DataError("label count does not match sample count");
    for (const auto& l : *labels) {
      if (l.path.size() != cfg.levels)
        throw DataError("label has wrong number of levels");
      for (uint32_t a : l.path)
        if (a >= cfg.classes) throw DataError("label class out of range");
    }
  }
}

}  // namespace

LevelProbs forward(const ClassifierParams& params, const DescriptorMap& desc,
                   const std::vector<RegionLabel>* teacher_labels) {
  validate_batch(params, desc, teacher_labels);
  const auto& cfg = params.config();
  const uint32_t n = cfg.levels, m = cfg.classes, D = cfg.dim;
  const auto& ops = kernels::active();

  std::vector<Mlp2View> heads, gammas, betas;
  for (uint32_t l = 0; l < n; ++l) {
    const std::string p = "L" + std::to_string(l);
    heads.push_back(make_view(params, p + ".head", D, cfg.hidden, m));
    if (l >= 1) {
      gammas.push_back(make_view(params, p + ".gamma", std::size_t(l) * m,
                                 cfg.hyper_width(), D));
      betas.push_back(make_view(params, p + ".beta", std::size_t(l) * m,
                                cfg.hyper_width(), D));
    }
  }

  LevelProbs out;
  out.classes = m;
  out.levels = n;
  out.samples = desc.count();
  out.data.resize(out.samples * n * m);

  Mlp2Work hw, gw, bw;
  std::vector<double> hin(std::size_t(n) * m), gamma(D), fmod(D);
  for (std::size_t s = 0; s < desc.count(); ++s) {
    const double* x = desc.row(s);
    for (uint32_t l = 0; l < n; ++l) {
      const double* f = x;
      if (l >= 1) {
        // Hyper-net input: ground-truth one-hot rows under teacher forcing,
        // the predicted distributions otherwise.
        std::fill(hin.begin(), hin.begin() + std::size_t(l) * m, 0.0);
        if (teacher_labels) {
          for (uint32_t i = 0; i < l; ++i)
            hin[std::size_t(i) * m + (*teacher_labels)[s].path[i]] = 1.0;
        } else {
          for (uint32_t i = 0; i < l; ++i)
            std::memcpy(hin.data() + std::size_t(i) * m, out.probs(s, i),
                        m * sizeof(double));
        }
        gw.resize(gammas[l - 1]);
        mlp2_forward(gammas[l - 1], hin.data(), cfg.ln_eps, gw);
        for (uint32_t d = 0; d < D; ++d) gamma[d] = 1.0 + gw.out[d];
        bw.resize(betas[l - 1]);
        mlp2_forward(betas[l - 1], hin.data(), cfg.ln_eps, bw);
        ops.modulate(x, gamma.data(), bw.out.data(), fmod.data(), D);
        f = fmod.data();
      }
      hw.resize(heads[l]);
      mlp2_forward(heads[l], f, cfg.ln_eps, hw);
      softmax(hw.out.data(), out.probs(s, l), m);
    }
  }
  return out;
}

RegionLabel compose_label(const LevelProbs& probs, std::size_t sample) {
  std::vector<uint32_t> path(probs.levels);
  for (uint32_t l = 0; l < probs.levels; ++l) {
    const double* p = probs.probs(sample, l);
    uint32_t best = 0;
    for (uint32_t c = 1; c < probs.classes; ++c)
      if (p[c] > p[best]) best = c;
    path[l] = best;
  }
  return RegionLabel::from_path(std::move(path), probs.classes);
}

LossGrad loss_and_grad(const ClassifierParams& params,
                       const DescriptorMap& desc,
                       const std::vector<RegionLabel>& labels,
                       const std::vector<uint32_t>* level_mask) {
  validate_batch(params, desc, &labels);
  const auto& cfg = params.config();
  const uint32_t n = cfg.levels, m = cfg.classes, D = cfg.dim;
  const std::size_t S = desc.count();
  const auto& ops = kernels::active();

  std::vector<char> active_level(n, 1);
  if (level_mask) {
    std::fill(active_level.begin(), active_level.end(), 0);
    for (uint32_t l : *level_mask) {
      if (l >= n) throw DataError("level mask out of range");
      active_level[l] = 1;
    }
  }

  LossGrad lg;
  lg.grad.assign(params.data().size(), 0.0);
  if (S == 0) return lg;

  std::vector<Mlp2View> heads, gammas, betas;
  std::vector<Mlp2Grad> head_g, gamma_g, beta_g;
  for (uint32_t l = 0; l < n; ++l) {
    const std::string p = "L" + std::to_string(l);
    heads.push_back(make_view(params, p + ".head", D, cfg.hidden, m));
    head_g.push_back(make_grad(params, lg.grad, p + ".head"));
    if (l >= 1) {
      gammas.push_back(make_view(params, p + ".gamma", std::size_t(l) * m,
                                 cfg.hyper_width(), D));
      betas.push_back(make_view(params, p + ".beta", std::size_t(l) * m,
                                cfg.hyper_width(), D));
      gamma_g.push_back(make_grad(params, lg.grad, p + ".gamma"));
      beta_g.push_back(make_grad(params, lg.grad, p + ".beta"));
    }
  }

  const double wsample = 1.0 / double(S);
  Mlp2Work hw, gw, bw;
  Mlp2Scratch scratch;
  std::vector<double> hin(std::size_t(n) * m), gamma(D), fmod(D), probs(m),
      dlogits(m), df(D), dgamma(D);
  double total = 0.0;

  for (std::size_t s = 0; s < S; ++s) {
    const double* x = desc.row(s);
    for (uint32_t l = 0; l < n; ++l) {
      if (!active_level[l]) continue;
      const double* f = x;
      if (l >= 1) {
        std::fill(hin.begin(), hin.begin() + std::size_t(l) * m, 0.0);
        for (uint32_t i = 0; i < l; ++i)
          hin[std::size_t(i) * m + labels[s].path[i]] = 1.0;
        gw.resize(gammas[l - 1]);
        mlp2_forward(gammas[l - 1], hin.data(), cfg.ln_eps, gw);
        for (uint32_t d = 0; d < D; ++d) gamma[d] = 1.0 + gw.out[d];
        bw.resize(betas[l - 1]);
        mlp2_forward(betas[l - 1], hin.data(), cfg.ln_eps, bw);
        ops.modulate(x, gamma.data(), bw.out.data(), fmod.data(), D);
        f = fmod.data();
      }
      hw.resize(heads[l]);
      mlp2_forward(heads[l], f, cfg.ln_eps, hw);
      softmax(hw.out.data(), probs.data(), m);
      const uint32_t y = labels[s].path[l];
      total += -std::log(probs[y]);

      for (uint32_t c = 0; c < m; ++c)
        dlogits[c] = (probs[c] - (c == y ? 1.0 : 0.0)) * wsample;
      mlp2_backward(heads[l], head_g[l], f, hw, dlogits.data(),
                    l >= 1 ? df.data() : nullptr, scratch);
      if (l >= 1) {
        // F = gamma.x + beta: dgamma = dF.x, dbeta = dF; gamma = 1 + raw.
        for (uint32_t d = 0; d < D; ++d) dgamma[d] = df[d] * x[d];
        mlp2_backward(gammas[l - 1], gamma_g[l - 1], hin.data(), gw,
                      dgamma.data(), nullptr, scratch);
        mlp2_backward(betas[l - 1], beta_g[l - 1], hin.data(), bw, df.data(),
                      nullptr, scratch);
      }
    }
  }
  lg.loss = total * wsample;
  return lg;
}

AccuracyReport evaluate_accuracy(const ClassifierParams& params,
                                 const std::vector<LabeledView>& data) {
  const uint32_t n = params.config().levels;
  AccuracyReport rep;
  rep.level_accuracy.assign(n, 0.0);
  std::size_t total = 0, composite_ok = 0;
  std::vector<std::size_t> level_ok(n, 0);
  for (const auto& view : data) {
    const LevelProbs probs = forward(params, view.desc);
    for (std::size_t s = 0; s < probs.samples; ++s) {
      const RegionLabel pred = compose_label(probs, s);
      bool all = true;
      for (uint32_t l = 0; l < n; ++l) {
        if (pred.path[l] == view.labels[s].path[l])
          level_ok[l]++;
        else
          all = false;
      }
      if (all) composite_ok++;
      total++;
    }
  }
  rep.samples = total;
  if (total > 0) {
    for (uint32_t l = 0; l < n; ++l)
      rep.level_accuracy[l] = double(level_ok[l]) / double(total);
    rep.composite_accuracy = double(composite_ok) / double(total);
  }
  return rep;
}

ClassifierParams train_fast(ClassifierParams params,
                            const std::vector<LabeledView>& data,
                            const TrainConfig& cfg,
                            std::vector<TrainLogRow>* log) {
  if (data.empty()) throw DataError("train_fast: empty dataset");
  const auto& ops = kernels::active();
  const std::size_t P = params.data().size();
  std::vector<double> m_state(P, 0.0), v_state(P, 0.0);

  auto log_row = [&](uint32_t iteration, double loss, bool eval) {
    if (!log) return;
    TrainLogRow row;
    row.iteration = iteration;
    row.loss = loss;
    if (eval) {
      const AccuracyReport rep = evaluate_accuracy(params, data);
      row.level_accuracy = rep.level_accuracy;
      row.composite_accuracy = rep.composite_accuracy;
    }
    log->push_back(std::move(row));
  };

  for (uint32_t t = 1; t <= cfg.iterations; ++t) {
    const LabeledView& view = data[(t - 1) % data.size()];
    LossGrad lg = loss_and_grad(params, view.desc, view.labels);
    if (!std::isfinite(lg.loss))
      throw NumericalError("train_fast: non-finite loss at iteration " +
                           std::to_string(t - 1));
    const bool eval = cfg.log_every > 0 && (t - 1) % cfg.log_every == 0;
    log_row(t - 1, lg.loss, eval);
    const double b1c = 1.0 - std::pow(cfg.beta1, double(t));
    const double b2c = 1.0 - std::pow(cfg.beta2, double(t));
    ops.adam_step(params.data().data(), lg.grad.data(), m_state.data(),
                  v_state.data(), P, cfg.learning_rate, cfg.beta1, cfg.beta2,
                  cfg.adam_eps, b1c, b2c);
  }
  if (log && cfg.iterations > 0) {
    // Final row: loss re-measured on the first view, full accuracy.
    const LossGrad lg = loss_and_grad(params, data[0].desc, data[0].labels);
    log_row(cfg.iterations, lg.loss, cfg.log_every > 0);
  }
  return params;
}

ClassifierParams reptile_pretrain(
    ClassifierParams params, const std::vector<std::vector<LabeledView>>& tasks,
    const MetaConfig& cfg, uint64_t seed) {
  if (tasks.empty()) throw DataError("reptile_pretrain: no tasks");
  for (const auto& t : tasks)
    if (t.empty()) throw DataError("reptile_pretrain: empty task");
  if (cfg.inner_steps < 1)
    throw DataError("reptile_pretrain: inner_steps must be >= 1");
  if (cfg.outer_step < 0.0)
    throw DataError("reptile_pretrain: outer_step must be >= 0");

  const auto& ops = kernels::active();
  const std::size_t P = params.data().size();
  Rng rng(seed);
  ClassifierParams adapted = params;
  std::vector<double> delta(P);

  for (uint32_t it = 0; it < cfg.iterations; ++it) {
    const auto& task = tasks[rng.bounded(tasks.size())];
    adapted.data() = params.data();
    for (uint32_t s = 0; s < cfg.inner_steps; ++s) {
      const LabeledView& view = task[rng.bounded(task.size())];
      LossGrad lg = loss_and_grad(adapted, view.desc, view.labels);
      if (!std::isfinite(lg.loss))
        throw NumericalError("reptile_pretrain: non-finite loss at iteration " +
                             std::to_string(it));
      ops.axpy(-cfg.inner_lr, lg.grad.data(), adapted.data().data(), P);
    }
    // G = adapted - params; params += epsilon * G
    delta = adapted.data();
    ops.axpy(-1.0, params.data().data(), delta.data(), P);
    ops.axpy(cfg.outer_step, delta.data(), params.data().data(), P);
  }
  return params;
}

// --- Checkpoint I/O ------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'S', 'R', 'C', 'C'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ClassifierParams& params,
                     const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  const auto& cfg = params.config();
  out.write(kCkptMagic, 4);
  auto put32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put32(kCkptVersion);
  put32(cfg.dim);
  put32(cfg.hidden);
  put32(cfg.classes);
  put32(cfg.levels);
  put32(cfg.hyper_hidden);
  out.write(reinterpret_cast<const char*>(&cfg.ln_eps), 8);
  const uint64_t count = params.data().size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(params.data().data()),
            std::streamsize(count * sizeof(double)));
  if (!out) throw DataError("write failed: " + path);

  nlohmann::json sidecar;
  sidecar["format"] = "fewloc-checkpoint";
  sidecar["version"] = kCkptVersion;
  sidecar["config"] = {{"dim", cfg.dim},
                       {"hidden", cfg.hidden},
                       {"classes", cfg.classes},
                       {"levels", cfg.levels},
                       {"hyper_hidden", cfg.hyper_hidden},
                       {"ln_eps", cfg.ln_eps}};
  sidecar["metadata"] = metadata;
  std::ofstream meta(path + ".json");
  if (!meta) throw DataError("cannot open for write: " + path + ".json");
  meta << sidecar.dump(2) << '\n';
}

ClassifierParams load_checkpoint(const std::string& path,
                                 nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  auto get32 = [&] {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const uint32_t version = get32();
  if (version != kCkptVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + " in " + path);
  ClassifierConfig cfg;
  cfg.dim = get32();
  cfg.hidden = get32();
  cfg.classes = get32();
  cfg.levels = get32();
  cfg.hyper_hidden = get32();
  in.read(reinterpret_cast<char*>(&cfg.ln_eps), 8);
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in) throw DataError("bad checkpoint header: " + path);
  ClassifierParams params(cfg, 0);
  if (count != params.data().size())
    throw DataError("checkpoint parameter count mismatch in " + path);
  in.read(reinterpret_cast<char*>(params.data().data()),
          std::streamsize(count * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint: " + path);

  if (metadata) {
    std::ifstream meta(path + ".json");
    if (meta) {
      nlohmann::json sidecar;
      try {
        meta >> sidecar;
        *metadata = sidecar.value("metadata", nlohmann::json::object());
      } catch (const nlohmann::json::exception&) {
        *metadata = nlohmann::json::object();
      }
    }
  }
  return params;
}

}  // namespace fewloc
