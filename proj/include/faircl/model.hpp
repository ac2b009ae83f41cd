#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace faircl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using ArrayXb = Eigen::Array<bool, Eigen::Dynamic, 1>;
using ArrayXXb = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log;
/// the gradient of a clamped entry is zero, matching the evaluated loss.
inline constexpr double kProbClamp = 1e-7;

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;  // fan_out x fan_in
  Vector<Scalar> bias;     // fan_out
};

/// Fully-connected net: affine + ReLU on hidden layers, affine + sigmoid on
/// the output layer. A pure value; copies are deep and mutation-independent.
template <typename Scalar = double>
struct Mlp {
  std::vector<Eigen::Index> layer_sizes;  // input dim, hidden dims..., output dim
  std::vector<DenseLayer<Scalar>> layers;

  Eigen::Index input_dim() const { return layer_sizes.front(); }
  Eigen::Index num_outputs() const { return layer_sizes.back(); }
  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }
};

template <typename Scalar = double>
struct MlpGradients {
  std::vector<DenseLayer<Scalar>> layers;  // shape-congruent with the model
};

/// Per-label training targets. Entries whose known flag is false are invisible
/// to every loss and gradient.
template <typename Scalar = double>
struct TargetVector {
  Vector<Scalar> values;  // in [0,1]; hard 0/1 for ground truth and pseudo-labels
  ArrayXb known;
};

template <typename Scalar = double>
struct Batch {
  Matrix<Scalar> features;       // one sample per row
  Matrix<Scalar> target_values;  // rows x labels
  ArrayXXb target_known;
};

/// Loss selector for loss_and_gradients: masked BCE alone (tau == 0 or no
/// teacher), or masked BCE + tau * distillation against the teacher's labels.
/// distill_rows, when non-empty, restricts the distillation term to flagged
/// rows; rows without it contribute only their BCE term.
template <typename Scalar = double>
struct LossSpec {
  Scalar tau = Scalar(0);
  const Mlp<Scalar>* teacher = nullptr;
  ArrayXb distill_rows;  // empty = every row
};

template <typename Scalar = double>
struct LossResult {
  Scalar loss = Scalar(0);          // data_loss + tau * distill_loss
  Scalar data_loss = Scalar(0);     // batch mean of per-sample masked BCE
  Scalar distill_loss = Scalar(0);  // batch mean of per-sample distillation
  MlpGradients<Scalar> grads;
};

namespace detail {

template <typename Derived>
void uniform_fill(Eigen::MatrixBase<Derived>& m, typename Derived::Scalar bound,
                  std::mt19937_64& rng) {
  std::uniform_real_distribution<typename Derived::Scalar> dist(-bound, bound);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
}

template <typename Scalar>
Scalar clamp_prob(Scalar p) {
  return std::clamp(p, Scalar(kProbClamp), Scalar(1) - Scalar(kProbClamp));
}

template <typename Scalar>
bool prob_interior(Scalar p) {
  return p > Scalar(kProbClamp) && p < Scalar(1) - Scalar(kProbClamp);
}

}  // namespace detail

template <typename Scalar>
Vector<Scalar> sigmoid(const Vector<Scalar>& z) {
  return z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

/// Scaled uniform initialization, bound sqrt(6 / (fan_in + fan_out)) per layer.
template <typename Scalar = double>
Mlp<Scalar> init_model(std::vector<Eigen::Index> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("init_model: need at least an input and an output layer");
  for (const auto s : layer_sizes)
    if (s < 1) throw std::invalid_argument("init_model: layer sizes must be positive");
  Mlp<Scalar> model;
  model.layer_sizes = std::move(layer_sizes);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
    const Eigen::Index fan_in = model.layer_sizes[l];
    const Eigen::Index fan_out = model.layer_sizes[l + 1];
    const Scalar bound = std::sqrt(Scalar(6) / Scalar(fan_in + fan_out));
    DenseLayer<Scalar> layer;
    layer.weights.resize(fan_out, fan_in);
    layer.bias.resize(fan_out);
    detail::uniform_fill(layer.weights, bound, rng);
    detail::uniform_fill(layer.bias, bound, rng);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

template <typename Scalar>
Vector<Scalar> forward(const Mlp<Scalar>& model, const Eigen::Ref<const Vector<Scalar>>& features) {
  if (features.size() != model.input_dim())
    throw std::invalid_argument("forward: feature length does not match the input layer");
  Vector<Scalar> a = features;
  const std::size_t depth = model.layers.size();
  for (std::size_t l = 0; l < depth; ++l) {
    Vector<Scalar> z = model.layers[l].weights * a + model.layers[l].bias;
    a = (l + 1 == depth) ? sigmoid(z) : z.cwiseMax(Scalar(0)).eval();
  }
  return a;
}

/// Row-wise forward; arithmetic is identical to per-sample forward().
template <typename Scalar>
Matrix<Scalar> forward_batch(const Mlp<Scalar>& model,
                             const Eigen::Ref<const Matrix<Scalar>>& features) {
  Matrix<Scalar> out(features.rows(), model.num_outputs());
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    out.row(i) = forward<Scalar>(model, features.row(i).transpose()).transpose();
  return out;
}

/// Mean over known entries of -[y ln p + (1-y) ln(1-p)]; 0 when nothing is known.
template <typename Scalar>
Scalar masked_bce_loss(const Eigen::Ref<const Vector<Scalar>>& pred,
                       const TargetVector<Scalar>& target) {
  if (pred.size() != target.values.size() || pred.size() != target.known.size())
    throw std::invalid_argument("masked_bce_loss: prediction/target length mismatch");
  Scalar sum = Scalar(0);
  Eigen::Index known = 0;
  for (Eigen::Index k = 0; k < pred.size(); ++k) {
    if (!target.known[k]) continue;
    const Scalar p = detail::clamp_prob(pred[k]);
    const Scalar y = target.values[k];
    sum += -(y * std::log(p) + (Scalar(1) - y) * std::log(Scalar(1) - p));
    ++known;
  }
  return known == 0 ? Scalar(0) : sum / Scalar(known);
}

/// Sigmoid cross-entropy with the teacher's probabilities as soft targets,
/// mean over the old-label set; empty set gives 0.
template <typename Scalar>
Scalar distillation_loss(const Eigen::Ref<const Vector<Scalar>>& student_old,
                         const Eigen::Ref<const Vector<Scalar>>& teacher_old) {
  if (student_old.size() != teacher_old.size())
    throw std::invalid_argument("distillation_loss: student/teacher length mismatch");
  if (student_old.size() == 0) return Scalar(0);
  Scalar sum = Scalar(0);
  for (Eigen::Index k = 0; k < student_old.size(); ++k) {
    const Scalar s = detail::clamp_prob(student_old[k]);
    const Scalar t = teacher_old[k];
    sum += -(t * std::log(s) + (Scalar(1) - t) * std::log(Scalar(1) - s));
  }
  return sum / Scalar(student_old.size());
}

template <typename Scalar>
MlpGradients<Scalar> zero_gradients(const Mlp<Scalar>& model) {
  MlpGradients<Scalar> g;
  g.layers.reserve(model.layers.size());
  for (const auto& l : model.layers)
    g.layers.push_back({Matrix<Scalar>::Zero(l.weights.rows(), l.weights.cols()),
                        Vector<Scalar>::Zero(l.bias.size())});
  return g;
}

/// Batch loss (mean over rows of per-sample loss) and its reverse-mode
/// gradient. Per sample: masked BCE over known labels, plus, for rows covered
/// by the spec's distillation flags, tau * distillation against the teacher on
/// the teacher's output labels. loss == data_loss + tau * distill_loss exactly.
template <typename Scalar>
LossResult<Scalar> loss_and_gradients(const Mlp<Scalar>& model, const Batch<Scalar>& batch,
                                      const LossSpec<Scalar>& spec) {
  const Eigen::Index rows = batch.features.rows();
  if (rows == 0) throw std::invalid_argument("loss_and_gradients: empty batch");
  if (batch.features.cols() != model.input_dim())
    throw std::invalid_argument("loss_and_gradients: feature width mismatch");
  if (batch.target_values.rows() != rows || batch.target_known.rows() != rows ||
      batch.target_values.cols() != model.num_outputs() ||
      batch.target_known.cols() != model.num_outputs())
    throw std::invalid_argument("loss_and_gradients: target shape mismatch");
  Eigen::Index n_old = 0;
  if (spec.teacher != nullptr) {
    if (spec.teacher->input_dim() != model.input_dim())
      throw std::invalid_argument("loss_and_gradients: teacher input dim mismatch");
    if (spec.teacher->num_outputs() > model.num_outputs())
      throw std::invalid_argument("loss_and_gradients: teacher head exceeds student head");
    n_old = spec.teacher->num_outputs();
  }
  if (spec.distill_rows.size() != 0 && spec.distill_rows.size() != rows)
    throw std::invalid_argument("loss_and_gradients: distill_rows size mismatch");

  LossResult<Scalar> result;
  result.grads = zero_gradients(model);
  const std::size_t depth = model.layers.size();
  std::vector<Vector<Scalar>> acts(depth + 1);
  std::vector<Vector<Scalar>> pre(depth);
  Scalar data_sum = Scalar(0);
  Scalar distill_sum = Scalar(0);

  for (Eigen::Index i = 0; i < rows; ++i) {
    acts[0] = batch.features.row(i).transpose();
    for (std::size_t l = 0; l < depth; ++l) {
      pre[l] = model.layers[l].weights * acts[l] + model.layers[l].bias;
      acts[l + 1] = (l + 1 == depth) ? sigmoid(pre[l]) : pre[l].cwiseMax(Scalar(0)).eval();
    }
    const Vector<Scalar>& probs = acts[depth];
    const TargetVector<Scalar> row_target{batch.target_values.row(i).transpose(),
                                          batch.target_known.row(i).transpose()};
    data_sum += masked_bce_loss<Scalar>(probs, row_target);

    Vector<Scalar> delta = Vector<Scalar>::Zero(model.num_outputs());
    const Eigen::Index known_count = row_target.known.count();
    if (known_count > 0) {
      const Scalar scale = Scalar(1) / (Scalar(known_count) * Scalar(rows));
      for (Eigen::Index k = 0; k < probs.size(); ++k) {
        if (!row_target.known[k]) continue;
        if (detail::prob_interior(probs[k]))
          delta[k] += (probs[k] - row_target.values[k]) * scale;
      }
    }
    const bool distill_row =
        spec.teacher != nullptr && n_old > 0 &&
        (spec.distill_rows.size() == 0 || spec.distill_rows[i]);
    if (distill_row) {
      const Vector<Scalar> teacher_probs = forward<Scalar>(*spec.teacher, acts[0]);
      distill_sum += distillation_loss<Scalar>(probs.head(n_old), teacher_probs);
      const Scalar dscale = spec.tau / (Scalar(n_old) * Scalar(rows));
      for (Eigen::Index k = 0; k < n_old; ++k)
        if (detail::prob_interior(probs[k]))
          delta[k] += (probs[k] - teacher_probs[k]) * dscale;
    }
    for (int l = static_cast<int>(depth) - 1; l >= 0; --l) {
      result.grads.layers[l].weights.noalias() += delta * acts[l].transpose();
      result.grads.layers[l].bias += delta;
      if (l > 0) {
        delta = (model.layers[l].weights.transpose() * delta)
                    .cwiseProduct(pre[l - 1].unaryExpr(
                        [](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
      }
    }
  }
  result.data_loss = data_sum / Scalar(rows);
  result.distill_loss = distill_sum / Scalar(rows);
  result.loss = result.data_loss + spec.tau * result.distill_loss;
  return result;
}

template <typename Scalar>
Mlp<Scalar> sgd_step(Mlp<Scalar> model, const MlpGradients<Scalar>& grads, Scalar eta) {
  if (!(eta > Scalar(0))) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (grads.layers.size() != model.layers.size())
    throw std::invalid_argument("sgd_step: gradient/model layer count mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    const auto& g = grads.layers[l];
    if (g.weights.rows() != layer.weights.rows() || g.weights.cols() != layer.weights.cols() ||
        g.bias.size() != layer.bias.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch");
    layer.weights -= eta * g.weights;
    layer.bias -= eta * g.bias;
  }
  return model;
}

/// Appends k_new freshly initialized output units. Pre-existing parameters are
/// untouched, so the first num_outputs entries of forward() are unchanged for
/// every input.
template <typename Scalar>
Mlp<Scalar> expand_output_head(Mlp<Scalar> model, Eigen::Index k_new, std::uint64_t seed) {
  if (k_new < 1) throw std::invalid_argument("expand_output_head: k_new must be >= 1");
  auto& out = model.layers.back();
  const Eigen::Index fan_in = out.weights.cols();
  const Eigen::Index new_rows = out.weights.rows() + k_new;
  out.weights.conservativeResize(new_rows, Eigen::NoChange);
  out.bias.conservativeResize(new_rows);
  std::mt19937_64 rng(seed);
  const Scalar bound = std::sqrt(Scalar(6) / Scalar(fan_in + new_rows));
  auto weight_block = out.weights.bottomRows(k_new);
  detail::uniform_fill(weight_block, bound, rng);
  auto bias_tail = out.bias.tail(k_new);
  detail::uniform_fill(bias_tail, bound, rng);
  model.layer_sizes.back() = new_rows;
  return model;
}

/// Frozen deep copy (Mlp is a value type; this names the teacher-taking intent).
template <typename Scalar>
Mlp<Scalar> snapshot(const Mlp<Scalar>& model) {
  return model;
}

}  // namespace faircl
