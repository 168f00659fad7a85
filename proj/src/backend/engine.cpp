// SPDX-License-Identifier: Apache-2.0
#include "tal/engine.hpp"

#include <cmath>

#include "tal/error.hpp"

namespace tal {
namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename S>
void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& xhat,
                RowVec<S>& inv_std, Mat<S>& y) {
  const Eigen::Index rows = x.rows();
  xhat.resize(rows, x.cols());
  inv_std.resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const S mean = x.row(t).mean();
    auto centered = (x.row(t).array() - mean).eval();
    const S var = centered.square().mean();
    const S rs = S(1) / std::sqrt(var + static_cast<S>(kNormEps));
    xhat.row(t) = centered * rs;
    inv_std(t) = rs;
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const RowVec<S>& inv_std,
                           const Mat<S>& gain, Mat<S>* d_gain, Mat<S>* d_bias) {
  if (d_gain) *d_gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (d_bias) *d_bias += dy.colwise().sum();
  Mat<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat<S> dx(dy.rows(), dy.cols());
  const S inv_n = S(1) / static_cast<S>(dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const S mean_d = dxhat.row(t).sum() * inv_n;
    const S mean_dx = dxhat.row(t).dot(xhat.row(t)) * inv_n;
    dx.row(t) = inv_std(t) * (dxhat.row(t).array() - mean_d - xhat.row(t).array() * mean_dx);
  }
  return dx;
}

template <typename S>
S gelu(S x) {
  const S c = static_cast<S>(kGeluC);
  return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  const S c = static_cast<S>(kGeluC);
  const S t = std::tanh(c * (x + S(0.044715) * x * x * x));
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3 * 0.044715) * x * x);
}

template <typename S>
void causal_softmax(Mat<S>& scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i).head(i + 1);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
    scores.row(i).tail(scores.cols() - i - 1).setZero();
  }
}

template <typename S>
const AdapterFactors<S>* find_factors(const LowRankAdapter<S>* adapter, const std::string& name) {
  if (adapter == nullptr) return nullptr;
  auto it = adapter->factors.find(name);
  return it == adapter->factors.end() ? nullptr : &it->second;
}

template <typename S>
const LowRankAdapter<S>* trainable_adapter(const ModelView<S>& model) {
  return model.adapters().empty() ? nullptr : model.adapters().back();
}

// Gradient of a projection y = a * (W + s * D * U) with respect to D and U.
template <typename S>
void adapter_projection_grad(const Mat<S>& a, const Mat<S>& dy, const AdapterFactors<S>& f, S scale,
                             AdapterFactors<S>& g) {
  Mat<S> a_down = a * f.down;
  g.up.noalias() += scale * (a_down.transpose() * dy);
  Mat<S> dy_up = dy * f.up.transpose();
  g.down.noalias() += scale * (a.transpose() * dy_up);
}

}  // namespace

template <typename S>
void forward(const ModelView<S>& model, std::span<const int> tokens, ForwardCache<S>& c) {
  const auto& cfg = model.config();
  const auto& layout = model.layout();
  const Eigen::Index steps = static_cast<Eigen::Index>(tokens.size());
  if (steps < 1 || steps > cfg.context_length)
    fail(errc::kPrecondition, "sequence of " + std::to_string(steps) + " tokens exceeds context " +
                                  std::to_string(cfg.context_length));
  const int d = cfg.model_width;
  const int heads = cfg.head_count;
  const int hd = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));

  c.tokens.assign(tokens.begin(), tokens.end());
  const auto& tok = model.weight(layout.token_embedding);
  const auto& pos = model.weight(layout.position_embedding);
  Mat<S> x(steps, d);
  for (Eigen::Index t = 0; t < steps; ++t) x.row(t) = tok.row(tokens[static_cast<size_t>(t)]) + pos.row(t);

  c.blocks.resize(static_cast<size_t>(cfg.layer_count));
  for (int b = 0; b < cfg.layer_count; ++b) {
    const auto& s = layout.blocks[static_cast<size_t>(b)];
    auto& bc = c.blocks[static_cast<size_t>(b)];
    bc.input = x;
    layer_norm(x, model.weight(s.ln1_gain), model.weight(s.ln1_bias), bc.norm1, bc.inv_std1, bc.attn_in);
    bc.query.noalias() = bc.attn_in * model.weight(s.query);
    bc.key.noalias() = bc.attn_in * model.weight(s.key);
    bc.value.noalias() = bc.attn_in * model.weight(s.value);
    bc.mixed.resize(steps, d);
    bc.probs.resize(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto q = bc.query.middleCols(h * hd, hd);
      auto k = bc.key.middleCols(h * hd, hd);
      auto v = bc.value.middleCols(h * hd, hd);
      Mat<S>& p = bc.probs[static_cast<size_t>(h)];
      p.noalias() = q * k.transpose();
      p *= scale;
      causal_softmax(p);
      bc.mixed.middleCols(h * hd, hd).noalias() = p * v;
    }
    bc.mid = bc.input;
    bc.mid.noalias() += bc.mixed * model.weight(s.output);
    layer_norm(bc.mid, model.weight(s.ln2_gain), model.weight(s.ln2_bias), bc.norm2, bc.inv_std2, bc.ff_in);
    bc.ff_pre.noalias() = bc.ff_in * model.weight(s.mlp_in);
    bc.ff_pre.rowwise() += model.weight(s.mlp_in_bias).row(0);
    bc.ff_act = bc.ff_pre.unaryExpr([](S v) { return gelu(v); });
    x = bc.mid;
    x.noalias() += bc.ff_act * model.weight(s.mlp_out);
    x.rowwise() += model.weight(s.mlp_out_bias).row(0);
  }
  c.final_in = x;
  layer_norm(x, model.weight(layout.final_gain), model.weight(layout.final_bias), c.final_norm,
             c.final_inv_std, c.hidden);
}

template <typename S>
void backward(const ModelView<S>& model, const ForwardCache<S>& c, const Mat<S>& d_hidden,
              GradientSink<S>& sink) {
  const auto& cfg = model.config();
  const auto& layout = model.layout();
  const int heads = cfg.head_count;
  const int hd = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  ParamStore<S>* g = sink.base;
  auto grad = [&](size_t slot) -> Mat<S>* { return g ? &(*g)[slot] : nullptr; };
  const LowRankAdapter<S>* adapter = sink.adapter ? trainable_adapter(model) : nullptr;
  require(sink.adapter == nullptr || adapter != nullptr, "adapter gradient requested without adapter");
  const S adapter_scale = adapter ? adapter->scale() : S(0);

  Mat<S> dx = layer_norm_backward(d_hidden, c.final_norm, c.final_inv_std, model.weight(layout.final_gain),
                                  grad(layout.final_gain), grad(layout.final_bias));

  for (int b = cfg.layer_count - 1; b >= 0; --b) {
    const auto& s = layout.blocks[static_cast<size_t>(b)];
    const auto& bc = c.blocks[static_cast<size_t>(b)];

    if (g) {
      (*g)[s.mlp_out].noalias() += bc.ff_act.transpose() * dx;
      (*g)[s.mlp_out_bias] += dx.colwise().sum();
    }
    Mat<S> d_pre = dx * model.weight(s.mlp_out).transpose();
    d_pre.array() *= bc.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
    if (g) {
      (*g)[s.mlp_in].noalias() += bc.ff_in.transpose() * d_pre;
      (*g)[s.mlp_in_bias] += d_pre.colwise().sum();
    }
    Mat<S> d_ff_in = d_pre * model.weight(s.mlp_in).transpose();
    Mat<S> d_mid = dx + layer_norm_backward(d_ff_in, bc.norm2, bc.inv_std2, model.weight(s.ln2_gain),
                                            grad(s.ln2_gain), grad(s.ln2_bias));

    if (g) (*g)[s.output].noalias() += bc.mixed.transpose() * d_mid;
    Mat<S> d_mixed = d_mid * model.weight(s.output).transpose();

    const Eigen::Index steps = bc.query.rows();
    Mat<S> dq(steps, cfg.model_width), dk(steps, cfg.model_width), dv(steps, cfg.model_width);
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& p = bc.probs[static_cast<size_t>(h)];
      auto q = bc.query.middleCols(h * hd, hd);
      auto k = bc.key.middleCols(h * hd, hd);
      auto v = bc.value.middleCols(h * hd, hd);
      auto d_out = d_mixed.middleCols(h * hd, hd);
      Mat<S> dp = d_out * v.transpose();
      dv.middleCols(h * hd, hd).noalias() = p.transpose() * d_out;
      RowVec<S> dot = (dp.array() * p.array()).rowwise().sum().transpose();
      Mat<S> ds = p.array() * (dp.array().colwise() - dot.transpose().array());
      ds *= scale;
      dq.middleCols(h * hd, hd).noalias() = ds * k;
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * q;
    }
    if (g) {
      (*g)[s.query].noalias() += bc.attn_in.transpose() * dq;
      (*g)[s.key].noalias() += bc.attn_in.transpose() * dk;
      (*g)[s.value].noalias() += bc.attn_in.transpose() * dv;
    }
    if (adapter) {
      const auto& params = model.base().params;
      if (const auto* f = find_factors(adapter, params.name(s.query)))
        adapter_projection_grad(bc.attn_in, dq, *f, adapter_scale, sink.adapter->factors.at(params.name(s.query)));
      if (const auto* f = find_factors(adapter, params.name(s.key)))
        adapter_projection_grad(bc.attn_in, dk, *f, adapter_scale, sink.adapter->factors.at(params.name(s.key)));
      if (const auto* f = find_factors(adapter, params.name(s.value)))
        adapter_projection_grad(bc.attn_in, dv, *f, adapter_scale, sink.adapter->factors.at(params.name(s.value)));
    }
    Mat<S> d_attn_in = dq * model.weight(s.query).transpose();
    d_attn_in.noalias() += dk * model.weight(s.key).transpose();
    d_attn_in.noalias() += dv * model.weight(s.value).transpose();
    dx = d_mid + layer_norm_backward(d_attn_in, bc.norm1, bc.inv_std1, model.weight(s.ln1_gain),
                                     grad(s.ln1_gain), grad(s.ln1_bias));
  }

  if (g) {
    auto& d_tok = (*g)[layout.token_embedding];
    auto& d_pos = (*g)[layout.position_embedding];
    for (Eigen::Index t = 0; t < dx.rows(); ++t) {
      d_tok.row(c.tokens[static_cast<size_t>(t)]) += dx.row(t);
      d_pos.row(t) += dx.row(t);
    }
  }
}

template <typename S>
Mat<S> vocab_logits(const ModelView<S>& model, const ForwardCache<S>& c, std::span<const int> rows) {
  const auto& emb = model.weight(model.layout().token_embedding);
  Mat<S> h(static_cast<Eigen::Index>(rows.size()), emb.cols());
  for (size_t i = 0; i < rows.size(); ++i) h.row(static_cast<Eigen::Index>(i)) = c.hidden.row(rows[i]);
  Mat<S> out;
  out.noalias() = h * emb.transpose();
  return out;
}

template <typename S>
void accumulate_vocab_grad(const ModelView<S>& model, const ForwardCache<S>& c, std::span<const int> rows,
                           const Mat<S>& d_logits, Mat<S>& d_hidden, GradientSink<S>& sink) {
  const auto& emb = model.weight(model.layout().token_embedding);
  Mat<S> dh = d_logits * emb;
  for (size_t i = 0; i < rows.size(); ++i) d_hidden.row(rows[i]) += dh.row(static_cast<Eigen::Index>(i));
  if (sink.base) {
    Mat<S> h(static_cast<Eigen::Index>(rows.size()), emb.cols());
    for (size_t i = 0; i < rows.size(); ++i) h.row(static_cast<Eigen::Index>(i)) = c.hidden.row(rows[i]);
    (*sink.base)[model.layout().token_embedding].noalias() += d_logits.transpose() * h;
  }
}

template <typename S>
std::array<S, 4> label_scores(const ModelView<S>& model, const ForwardCache<S>& c, int row) {
  const auto& emb = model.weight(model.layout().token_embedding);
  std::array<S, 4> out{};
  for (int l = 0; l < 4; ++l) out[static_cast<size_t>(l)] = emb.row(Vocabulary::label_token(l)).dot(c.hidden.row(row));
  return out;
}

template <typename S>
void accumulate_label_grad(const ModelView<S>& model, const ForwardCache<S>& c, int row,
                           const std::array<S, 4>& d_scores, Mat<S>& d_hidden, GradientSink<S>& sink) {
  const auto& emb = model.weight(model.layout().token_embedding);
  for (int l = 0; l < 4; ++l) {
    const S gs = d_scores[static_cast<size_t>(l)];
    d_hidden.row(row) += gs * emb.row(Vocabulary::label_token(l));
    if (sink.base) (*sink.base)[model.layout().token_embedding].row(Vocabulary::label_token(l)) += gs * c.hidden.row(row);
  }
}

template <typename S>
DecodeState<S> make_decode_state(const ModelView<S>& model) {
  const auto& cfg = model.config();
  DecodeState<S> st;
  st.keys.assign(static_cast<size_t>(cfg.layer_count), Mat<S>(cfg.context_length, cfg.model_width));
  st.values.assign(static_cast<size_t>(cfg.layer_count), Mat<S>(cfg.context_length, cfg.model_width));
  return st;
}

template <typename S>
RowVec<S> decode_step(const ModelView<S>& model, DecodeState<S>& st, int token) {
  const auto& cfg = model.config();
  const auto& layout = model.layout();
  const int pos = st.length;
  if (pos >= cfg.context_length) fail(errc::kPrecondition, "decoding past context length");
  const int hd = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));

  Mat<S> x = model.weight(layout.token_embedding).row(token) + model.weight(layout.position_embedding).row(pos);
  Mat<S> xhat, y;
  RowVec<S> inv_std;
  for (int b = 0; b < cfg.layer_count; ++b) {
    const auto& s = layout.blocks[static_cast<size_t>(b)];
    layer_norm(x, model.weight(s.ln1_gain), model.weight(s.ln1_bias), xhat, inv_std, y);
    auto& keys = st.keys[static_cast<size_t>(b)];
    auto& values = st.values[static_cast<size_t>(b)];
    Mat<S> q = y * model.weight(s.query);
    keys.row(pos).noalias() = y * model.weight(s.key);
    values.row(pos).noalias() = y * model.weight(s.value);
    Mat<S> mixed(1, cfg.model_width);
    for (int h = 0; h < cfg.head_count; ++h) {
      auto k = keys.topRows(pos + 1).middleCols(h * hd, hd);
      auto v = values.topRows(pos + 1).middleCols(h * hd, hd);
      RowVec<S> sc = (q.middleCols(h * hd, hd) * k.transpose()) * scale;
      sc = (sc.array() - sc.maxCoeff()).exp();
      sc /= sc.sum();
      mixed.middleCols(h * hd, hd).noalias() = sc * v;
    }
    x.noalias() += mixed * model.weight(s.output);
    layer_norm(x, model.weight(s.ln2_gain), model.weight(s.ln2_bias), xhat, inv_std, y);
    Mat<S> pre = y * model.weight(s.mlp_in) + model.weight(s.mlp_in_bias);
    Mat<S> act = pre.unaryExpr([](S v) { return gelu(v); });
    x.noalias() += act * model.weight(s.mlp_out);
    x += model.weight(s.mlp_out_bias);
  }
  layer_norm(x, model.weight(layout.final_gain), model.weight(layout.final_bias), xhat, inv_std, y);
  ++st.length;
  RowVec<S> logits = y * model.weight(layout.token_embedding).transpose();
  return logits;
}

#define TAL_INSTANTIATE_ENGINE(S)                                                                       \
  template void forward(const ModelView<S>&, std::span<const int>, ForwardCache<S>&);                   \
  template void backward(const ModelView<S>&, const ForwardCache<S>&, const Mat<S>&, GradientSink<S>&); \
  template Mat<S> vocab_logits(const ModelView<S>&, const ForwardCache<S>&, std::span<const int>);      \
  template void accumulate_vocab_grad(const ModelView<S>&, const ForwardCache<S>&, std::span<const int>, \
                                      const Mat<S>&, Mat<S>&, GradientSink<S>&);                          \
  template std::array<S, 4> label_scores(const ModelView<S>&, const ForwardCache<S>&, int);             \
  template void accumulate_label_grad(const ModelView<S>&, const ForwardCache<S>&, int,                 \
                                      const std::array<S, 4>&, Mat<S>&, GradientSink<S>&);              \
  template DecodeState<S> make_decode_state(const ModelView<S>&);                                       \
  template RowVec<S> decode_step(const ModelView<S>&, DecodeState<S>&, int);

TAL_INSTANTIATE_ENGINE(float)
TAL_INSTANTIATE_ENGINE(double)

}  // namespace tal
