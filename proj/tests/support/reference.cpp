#include "support/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace xp::ref {
namespace {

template <typename S>
using Rows = std::vector<std::vector<S>>;

template <typename S>
void layer_norm(Rows<S>& x, const Mat<S>& gain, const Mat<S>& bias) {
    const int d = static_cast<int>(x[0].size());
    for (auto& row : x) {
        S mu = 0;
        for (int j = 0; j < d; ++j) {
            mu += row[j];
        }
        mu /= static_cast<S>(d);
        S var = 0;
        for (int j = 0; j < d; ++j) {
            var += (row[j] - mu) * (row[j] - mu);
        }
        var /= static_cast<S>(d);
        const S r = S(1) / std::sqrt(var + S(1e-5));
        for (int j = 0; j < d; ++j) {
            row[j] = (row[j] - mu) * r * gain.at(0, j) + bias.at(0, j);
        }
    }
}

// out[t][o] = bias[o] + sum_j in[t][j] * weight[j][o]
template <typename S>
Rows<S> affine(const Rows<S>& in, const Mat<S>& weight, const Mat<S>& bias) {
    const int n = weight.cols;
    Rows<S> out(in.size(), std::vector<S>(static_cast<size_t>(n)));
    for (size_t t = 0; t < in.size(); ++t) {
        for (int o = 0; o < n; ++o) {
            S acc = bias.at(0, o);
            for (int j = 0; j < weight.rows; ++j) {
                acc += in[t][static_cast<size_t>(j)] * weight.at(j, o);
            }
            out[t][static_cast<size_t>(o)] = acc;
        }
    }
    return out;
}

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475)));
}

}  // namespace

template <typename S>
Mat<double> naive_logprobs(const WeightsT<S>& w, const Mat<S>& ext, const std::vector<int>& ids) {
    const auto& cfg = w.config;
    const int L = static_cast<int>(ids.size());
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = d / nh;
    const int V = cfg.vocab_size;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    Rows<S> x(static_cast<size_t>(L), std::vector<S>(static_cast<size_t>(d)));
    for (int t = 0; t < L; ++t) {
        const int id = ids[static_cast<size_t>(t)];
        const S* e = id < V ? w.tok_emb.row(id) : ext.row(id - V);
        for (int j = 0; j < d; ++j) {
            x[static_cast<size_t>(t)][static_cast<size_t>(j)] = e[j] + w.pos_emb.at(t, j);
        }
    }

    for (const auto& lw : w.layers) {
        Rows<S> h = x;
        layer_norm(h, lw.ln1_g, lw.ln1_b);
        const Rows<S> q = affine(h, lw.wq, lw.bq);
        const Rows<S> k = affine(h, lw.wk, lw.bk);
        const Rows<S> v = affine(h, lw.wv, lw.bv);

        Rows<S> ctx(static_cast<size_t>(L), std::vector<S>(static_cast<size_t>(d), S(0)));
        for (int head = 0; head < nh; ++head) {
            const int off = head * dh;
            for (int i = 0; i < L; ++i) {
                std::vector<S> score(static_cast<size_t>(i) + 1);
                S mx = 0;
                for (int j = 0; j <= i; ++j) {
                    S s = 0;
                    for (int c = 0; c < dh; ++c) {
                        s += q[static_cast<size_t>(i)][static_cast<size_t>(off + c)] *
                             k[static_cast<size_t>(j)][static_cast<size_t>(off + c)];
                    }
                    s *= scale;
                    score[static_cast<size_t>(j)] = s;
                    mx = j == 0 ? s : std::max(mx, s);
                }
                S z = 0;
                for (int j = 0; j <= i; ++j) {
                    score[static_cast<size_t>(j)] = std::exp(score[static_cast<size_t>(j)] - mx);
                    z += score[static_cast<size_t>(j)];
                }
                for (int j = 0; j <= i; ++j) {
                    const S a = score[static_cast<size_t>(j)] / z;
                    for (int c = 0; c < dh; ++c) {
                        ctx[static_cast<size_t>(i)][static_cast<size_t>(off + c)] +=
                            a * v[static_cast<size_t>(j)][static_cast<size_t>(off + c)];
                    }
                }
            }
        }
        const Rows<S> attn_out = affine(ctx, lw.wo, lw.bo);
        for (int t = 0; t < L; ++t) {
            for (int j = 0; j < d; ++j) {
                x[static_cast<size_t>(t)][static_cast<size_t>(j)] +=
                    attn_out[static_cast<size_t>(t)][static_cast<size_t>(j)];
            }
        }

        Rows<S> h2 = x;
        layer_norm(h2, lw.ln2_g, lw.ln2_b);
        Rows<S> f1 = affine(h2, lw.w1, lw.b1);
        for (auto& row : f1) {
            for (auto& val : row) {
                val = gelu(val);
            }
        }
        const Rows<S> f2 = affine(f1, lw.w2, lw.b2);
        for (int t = 0; t < L; ++t) {
            for (int j = 0; j < d; ++j) {
                x[static_cast<size_t>(t)][static_cast<size_t>(j)] +=
                    f2[static_cast<size_t>(t)][static_cast<size_t>(j)];
            }
        }
    }

    layer_norm(x, w.lnf_g, w.lnf_b);

    Mat<double> out(L, V);
    std::vector<S> logits(static_cast<size_t>(V));
    for (int t = 0; t < L; ++t) {
        for (int vtok = 0; vtok < V; ++vtok) {
            S acc = 0;
            for (int j = 0; j < d; ++j) {
                acc += x[static_cast<size_t>(t)][static_cast<size_t>(j)] * w.tok_emb.at(vtok, j);
            }
            logits[static_cast<size_t>(vtok)] = acc;
        }
        double mx = static_cast<double>(logits[0]);
        for (int vtok = 1; vtok < V; ++vtok) {
            mx = std::max(mx, static_cast<double>(logits[static_cast<size_t>(vtok)]));
        }
        double z = 0.0;
        for (int vtok = 0; vtok < V; ++vtok) {
            z += std::exp(static_cast<double>(logits[static_cast<size_t>(vtok)]) - mx);
        }
        const double lse = mx + std::log(z);
        for (int vtok = 0; vtok < V; ++vtok) {
            out.at(t, vtok) = static_cast<double>(logits[static_cast<size_t>(vtok)]) - lse;
        }
    }
    return out;
}

template Mat<double> naive_logprobs<float>(const WeightsT<float>&, const Mat<float>&,
                                           const std::vector<int>&);
template Mat<double> naive_logprobs<double>(const WeightsT<double>&, const Mat<double>&,
                                            const std::vector<int>&);

template <typename S>
double naive_score(const WeightsT<S>& w, const Mat<S>& ext, const std::vector<int>& prompt,
                   const std::vector<int>& continuation) {
    if (prompt.empty() || continuation.empty()) {
        throw std::invalid_argument("naive_score needs a prompt and a continuation");
    }
    std::vector<int> ids = prompt;
    ids.insert(ids.end(), continuation.begin(), continuation.end());
    const Mat<double> lp = naive_logprobs(w, ext, ids);
    const int m = static_cast<int>(prompt.size());
    const int L = static_cast<int>(ids.size());
    double total = 0.0;
    for (int pos = m - 1; pos < L - 1; ++pos) {
        total += lp.at(pos, ids[static_cast<size_t>(pos) + 1]);
    }
    return total;
}

template double naive_score<float>(const WeightsT<float>&, const Mat<float>&,
                                   const std::vector<int>&, const std::vector<int>&);
template double naive_score<double>(const WeightsT<double>&, const Mat<double>&,
                                    const std::vector<int>&, const std::vector<int>&);

float scalar_adam_step(ScalarAdam& s, float param, float grad, double lr) {
    s.step += 1;
    const double g = static_cast<double>(grad);
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * g;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * g * g;
    const double mhat = s.m / (1.0 - std::pow(s.beta1, s.step));
    const double vhat = s.v / (1.0 - std::pow(s.beta2, s.step));
    return static_cast<float>(static_cast<double>(param) -
                              lr * mhat / (std::sqrt(vhat) + s.epsilon));
}

}  // namespace xp::ref
