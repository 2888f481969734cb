#include "engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace xp {
namespace {

template <typename S>
void fill_bias_rows(Mat<S>& y, const Mat<S>& bias) {
    for (int i = 0; i < y.rows; ++i) {
        std::copy(bias.row(0), bias.row(0) + y.cols, y.row(i));
    }
}

template <typename S>
void colsum_add(Mat<S>& acc, const Mat<S>& x) {
    for (int i = 0; i < x.rows; ++i) {
        const S* xi = x.row(i);
        S* a = acc.row(0);
        for (int j = 0; j < x.cols; ++j) {
            a[j] += xi[j];
        }
    }
}

constexpr double kLnEps = 1e-5;

template <typename S>
void ln_forward(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, Mat<S>& y,
                std::vector<S>& mu, std::vector<S>& rs) {
    const int n = x.cols;
    y.resize(x.rows, n);
    mu.resize(static_cast<size_t>(x.rows));
    rs.resize(static_cast<size_t>(x.rows));
    const S* gv = g.row(0);
    const S* bv = b.row(0);
    for (int i = 0; i < x.rows; ++i) {
        const S* xi = x.row(i);
        S m = 0;
        for (int j = 0; j < n; ++j) {
            m += xi[j];
        }
        m /= static_cast<S>(n);
        S var = 0;
        for (int j = 0; j < n; ++j) {
            const S d = xi[j] - m;
            var += d * d;
        }
        var /= static_cast<S>(n);
        const S r = S(1) / std::sqrt(var + S(kLnEps));
        mu[static_cast<size_t>(i)] = m;
        rs[static_cast<size_t>(i)] = r;
        S* yi = y.row(i);
        for (int j = 0; j < n; ++j) {
            yi[j] = (xi[j] - m) * r * gv[j] + bv[j];
        }
    }
}

// Accumulates d(loss)/dx into dx_acc; optionally accumulates gain/bias grads.
template <typename S>
void ln_backward(const Mat<S>& dy, const Mat<S>& x, const std::vector<S>& mu,
                 const std::vector<S>& rs, const Mat<S>& g, Mat<S>& dx_acc,
                 Mat<S>* dg, Mat<S>* db) {
    const int n = x.cols;
    const S* gv = g.row(0);
    for (int i = 0; i < x.rows; ++i) {
        const S* dyi = dy.row(i);
        const S* xi = x.row(i);
        const S m = mu[static_cast<size_t>(i)];
        const S r = rs[static_cast<size_t>(i)];
        S s1 = 0;
        S s2 = 0;
        for (int j = 0; j < n; ++j) {
            const S dg_j = dyi[j] * gv[j];
            s1 += dg_j;
            s2 += dg_j * (xi[j] - m) * r;
        }
        s1 /= static_cast<S>(n);
        s2 /= static_cast<S>(n);
        S* dxi = dx_acc.row(i);
        for (int j = 0; j < n; ++j) {
            const S xhat = (xi[j] - m) * r;
            dxi[j] += r * (dyi[j] * gv[j] - s1 - xhat * s2);
        }
        if (dg != nullptr) {
            S* dgp = dg->row(0);
            S* dbp = db->row(0);
            for (int j = 0; j < n; ++j) {
                dgp[j] += dyi[j] * (xi[j] - m) * r;
                dbp[j] += dyi[j];
            }
        }
    }
}

}  // namespace

template <typename S>
Engine<S>::Engine(const WeightsT<S>& w) : w_(&w) {
    w.config.validate();
    if (w.tok_emb.rows != w.config.vocab_size || w.tok_emb.cols != w.config.d_model) {
        throw std::invalid_argument("token embedding shape disagrees with config");
    }
    emb_t_ = transposed(w.tok_emb);
    lt_.reserve(w.layers.size());
    for (const auto& l : w.layers) {
        lt_.push_back({transposed(l.wq), transposed(l.wk), transposed(l.wv),
                       transposed(l.wo), transposed(l.w1), transposed(l.w2)});
    }
}

template <typename S>
void Engine<S>::check_ids(const Mat<S>& ext, const std::vector<int>& ids) const {
    const auto& cfg = w_->config;
    if (ids.empty()) {
        throw std::invalid_argument("empty sequence");
    }
    if (static_cast<int>(ids.size()) > cfg.max_seq_len) {
        throw std::invalid_argument("sequence exceeds max_seq_len (" +
                                    std::to_string(ids.size()) + " > " +
                                    std::to_string(cfg.max_seq_len) + ")");
    }
    for (const int id : ids) {
        if (id < 0 || id >= cfg.vocab_size + ext.rows) {
            throw std::invalid_argument("token id out of range: " + std::to_string(id));
        }
        if (id >= cfg.vocab_size && ext.cols != cfg.d_model) {
            throw std::invalid_argument("extension table width disagrees with d_model");
        }
    }
}

template <typename S>
void Engine<S>::check_score_args(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                                 const std::vector<int>& continuation_ids) const {
    if (prompt_ids.empty()) {
        throw std::invalid_argument("prompt must contain at least one token");
    }
    if (continuation_ids.empty()) {
        throw std::invalid_argument("continuation must be non-empty");
    }
    for (const int id : continuation_ids) {
        if (id >= w_->config.vocab_size) {
            throw std::invalid_argument("imaginary tokens cannot be scored as targets");
        }
    }
    (void)ext;
}

template <typename S>
void Engine<S>::forward(const Mat<S>& ext, const std::vector<int>& ids, int lo, int hi,
                        Stash* stash, Mat<S>& logits) const {
    check_ids(ext, ids);
    const auto& cfg = w_->config;
    const int L = static_cast<int>(ids.size());
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = d / nh;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    Mat<S> x(L, d);
    for (int t = 0; t < L; ++t) {
        const S* e = emb_row(ext, ids[t]);
        const S* p = w_->pos_emb.row(t);
        S* xt = x.row(t);
        for (int j = 0; j < d; ++j) {
            xt[j] = e[j] + p[j];
        }
    }

    if (stash != nullptr) {
        stash->layers.resize(w_->layers.size());
    }
    for (size_t li = 0; li < w_->layers.size(); ++li) {
        const auto& lw = w_->layers[li];
        LayerStash* st = stash != nullptr ? &stash->layers[li] : nullptr;

        Mat<S> ln1;
        std::vector<S> mu1, rs1;
        ln_forward(x, lw.ln1_g, lw.ln1_b, ln1, mu1, rs1);

        Mat<S> q(L, d), k(L, d), v(L, d);
        fill_bias_rows(q, lw.bq);
        fill_bias_rows(k, lw.bk);
        fill_bias_rows(v, lw.bv);
        mm_add_nn(q.row(0), ln1.row(0), lw.wq.row(0), L, d, d);
        mm_add_nn(k.row(0), ln1.row(0), lw.wk.row(0), L, d, d);
        mm_add_nn(v.row(0), ln1.row(0), lw.wv.row(0), L, d, d);

        Mat<S> att(L, nh * L);
        Mat<S> ctx(L, d);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int i = 0; i < L; ++i) {
                S* arow = att.row(i) + h * L;
                const S* qi = q.row(i) + off;
                S mx = std::numeric_limits<S>::lowest();
                for (int j = 0; j <= i; ++j) {
                    const S* kj = k.row(j) + off;
                    S s = 0;
                    for (int c = 0; c < dh; ++c) {
                        s += qi[c] * kj[c];
                    }
                    s *= scale;
                    arow[j] = s;
                    mx = std::max(mx, s);
                }
                S z = 0;
                for (int j = 0; j <= i; ++j) {
                    const S e = std::exp(arow[j] - mx);
                    arow[j] = e;
                    z += e;
                }
                const S inv = S(1) / z;
                S* ci = ctx.row(i) + off;
                for (int j = 0; j <= i; ++j) {
                    const S a = arow[j] * inv;
                    arow[j] = a;
                    const S* vj = v.row(j) + off;
                    for (int c = 0; c < dh; ++c) {
                        ci[c] += a * vj[c];
                    }
                }
            }
        }

        Mat<S> attn(L, d);
        fill_bias_rows(attn, lw.bo);
        mm_add_nn(attn.row(0), ctx.row(0), lw.wo.row(0), L, d, d);

        Mat<S> x2(L, d);
        for (size_t idx = 0; idx < x.a.size(); ++idx) {
            x2.a[idx] = x.a[idx] + attn.a[idx];
        }

        Mat<S> ln2;
        std::vector<S> mu2, rs2;
        ln_forward(x2, lw.ln2_g, lw.ln2_b, ln2, mu2, rs2);

        Mat<S> h1(L, cfg.d_ffn);
        fill_bias_rows(h1, lw.b1);
        mm_add_nn(h1.row(0), ln2.row(0), lw.w1.row(0), L, d, cfg.d_ffn);
        Mat<S> h1g(L, cfg.d_ffn);
        for (size_t idx = 0; idx < h1.a.size(); ++idx) {
            h1g.a[idx] = gelu(h1.a[idx]);
        }
        Mat<S> f(L, d);
        fill_bias_rows(f, lw.b2);
        mm_add_nn(f.row(0), h1g.row(0), lw.w2.row(0), L, cfg.d_ffn, d);

        Mat<S> x3(L, d);
        for (size_t idx = 0; idx < x.a.size(); ++idx) {
            x3.a[idx] = x2.a[idx] + f.a[idx];
        }

        if (st != nullptr) {
            st->x = std::move(x);
            st->ln1 = std::move(ln1);
            st->mu1 = std::move(mu1);
            st->rs1 = std::move(rs1);
            st->q = std::move(q);
            st->k = std::move(k);
            st->v = std::move(v);
            st->att = std::move(att);
            st->ctx = std::move(ctx);
            st->x2 = std::move(x2);
            st->ln2 = std::move(ln2);
            st->mu2 = std::move(mu2);
            st->rs2 = std::move(rs2);
            st->h1 = std::move(h1);
            st->h1g = std::move(h1g);
        }
        x = std::move(x3);
    }

    Mat<S> hf;
    std::vector<S> muf, rsf;
    ln_forward(x, w_->lnf_g, w_->lnf_b, hf, muf, rsf);

    logits.resize(hi - lo, cfg.vocab_size);
    mm_add_nn(logits.row(0), hf.row(lo), emb_t_.row(0), hi - lo, d, cfg.vocab_size);

    if (stash != nullptr) {
        stash->xf = std::move(x);
        stash->hf = std::move(hf);
        stash->muf = std::move(muf);
        stash->rsf = std::move(rsf);
    }
}

template <typename S>
double Engine<S>::scored_sum(const Mat<S>& logits, const std::vector<int>& continuation_ids,
                             Mat<S>* dlogits, ScoredTokens* per_token) const {
    const int v = logits.cols;
    double total = 0.0;
    if (dlogits != nullptr) {
        dlogits->resize(logits.rows, v);
    }
    for (int r = 0; r < logits.rows; ++r) {
        const S* row = logits.row(r);
        const int target = continuation_ids[static_cast<size_t>(r)];
        S mx = row[0];
        int arg = 0;
        for (int j = 1; j < v; ++j) {
            if (row[j] > mx) {
                mx = row[j];
                arg = j;
            }
        }
        double z = 0.0;
        for (int j = 0; j < v; ++j) {
            z += std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
        }
        const double lse = static_cast<double>(mx) + std::log(z);
        total += static_cast<double>(row[target]) - lse;
        if (per_token != nullptr) {
            per_token->nll.push_back(lse - static_cast<double>(row[target]));
            per_token->argmax.push_back(arg);
        }
        if (dlogits != nullptr) {
            S* dl = dlogits->row(r);
            for (int j = 0; j < v; ++j) {
                dl[j] = static_cast<S>(-std::exp(static_cast<double>(row[j]) - lse));
            }
            dl[target] += S(1);
        }
    }
    return total;
}

template <typename S>
void Engine<S>::backward(const std::vector<int>& ids, int lo, const Mat<S>& dlogits,
                         const Stash& stash, Mat<S>* dinput, WeightsT<S>* wgrads) const {
    const auto& cfg = w_->config;
    const int L = static_cast<int>(ids.size());
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = d / nh;
    const int scored = dlogits.rows;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    // tied head: dH = dlogits · E over the scored rows; E also collects
    // dE += dlogitsᵀ · H when weight grads are requested
    Mat<S> dhf(L, d);
    mm_add_nn(dhf.row(lo), dlogits.row(0), w_->tok_emb.row(0), scored, cfg.vocab_size, d);
    if (wgrads != nullptr) {
        mm_add_tn(wgrads->tok_emb.row(0), dlogits.row(0), stash.hf.row(lo),
                  cfg.vocab_size, scored, d);
    }

    Mat<S> dx(L, d);
    ln_backward(dhf, stash.xf, stash.muf, stash.rsf, w_->lnf_g, dx,
                wgrads != nullptr ? &wgrads->lnf_g : nullptr,
                wgrads != nullptr ? &wgrads->lnf_b : nullptr);

    std::vector<S> dabuf(static_cast<size_t>(L));
    for (int li = static_cast<int>(w_->layers.size()) - 1; li >= 0; --li) {
        const auto& lw = w_->layers[static_cast<size_t>(li)];
        const auto& tr = lt_[static_cast<size_t>(li)];
        const auto& st = stash.layers[static_cast<size_t>(li)];
        LayerWeightsT<S>* wg = wgrads != nullptr ? &wgrads->layers[static_cast<size_t>(li)] : nullptr;

        // x3 = x2 + W2·gelu(W1·ln2(x2)); dx currently holds d/dx3
        Mat<S> dh1g(L, cfg.d_ffn);
        mm_add_nn(dh1g.row(0), dx.row(0), tr.w2_t.row(0), L, d, cfg.d_ffn);
        if (wg != nullptr) {
            mm_add_tn(wg->w2.row(0), st.h1g.row(0), dx.row(0), cfg.d_ffn, L, d);
            colsum_add(wg->b2, dx);
        }
        Mat<S> dh1(L, cfg.d_ffn);
        for (size_t idx = 0; idx < dh1.a.size(); ++idx) {
            dh1.a[idx] = dh1g.a[idx] * gelu_deriv(st.h1.a[idx]);
        }
        Mat<S> dln2(L, d);
        mm_add_nn(dln2.row(0), dh1.row(0), tr.w1_t.row(0), L, cfg.d_ffn, d);
        if (wg != nullptr) {
            mm_add_tn(wg->w1.row(0), st.ln2.row(0), dh1.row(0), d, L, cfg.d_ffn);
            colsum_add(wg->b1, dh1);
        }

        Mat<S> dx2 = dx;  // residual branch
        ln_backward(dln2, st.x2, st.mu2, st.rs2, lw.ln2_g, dx2,
                    wg != nullptr ? &wg->ln2_g : nullptr,
                    wg != nullptr ? &wg->ln2_b : nullptr);

        // x2 = x + Wo·ctx + bo; dx2 holds d/dx2
        Mat<S> dctx(L, d);
        mm_add_nn(dctx.row(0), dx2.row(0), tr.wo_t.row(0), L, d, d);
        if (wg != nullptr) {
            mm_add_tn(wg->wo.row(0), st.ctx.row(0), dx2.row(0), d, L, d);
            colsum_add(wg->bo, dx2);
        }

        Mat<S> dq(L, d), dk(L, d), dv(L, d);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int i = 0; i < L; ++i) {
                const S* arow = st.att.row(i) + h * L;
                const S* dci = dctx.row(i) + off;
                S dsum = 0;
                for (int j = 0; j <= i; ++j) {
                    const S* vj = st.v.row(j) + off;
                    S da = 0;
                    for (int c = 0; c < dh; ++c) {
                        da += dci[c] * vj[c];
                    }
                    dabuf[static_cast<size_t>(j)] = da;
                    dsum += arow[j] * da;
                }
                const S* qi = st.q.row(i) + off;
                S* dqi = dq.row(i) + off;
                for (int j = 0; j <= i; ++j) {
                    const S a = arow[j];
                    const S ds = a * (dabuf[static_cast<size_t>(j)] - dsum) * scale;
                    const S* kj = st.k.row(j) + off;
                    S* dkj = dk.row(j) + off;
                    S* dvj = dv.row(j) + off;
                    for (int c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                        dvj[c] += a * dci[c];
                    }
                }
            }
        }

        Mat<S> dln1(L, d);
        mm_add_nn(dln1.row(0), dq.row(0), tr.wq_t.row(0), L, d, d);
        mm_add_nn(dln1.row(0), dk.row(0), tr.wk_t.row(0), L, d, d);
        mm_add_nn(dln1.row(0), dv.row(0), tr.wv_t.row(0), L, d, d);
        if (wg != nullptr) {
            mm_add_tn(wg->wq.row(0), st.ln1.row(0), dq.row(0), d, L, d);
            mm_add_tn(wg->wk.row(0), st.ln1.row(0), dk.row(0), d, L, d);
            mm_add_tn(wg->wv.row(0), st.ln1.row(0), dv.row(0), d, L, d);
            colsum_add(wg->bq, dq);
            colsum_add(wg->bk, dk);
            colsum_add(wg->bv, dv);
        }
        ln_backward(dln1, st.x, st.mu1, st.rs1, lw.ln1_g, dx2,
                    wg != nullptr ? &wg->ln1_g : nullptr,
                    wg != nullptr ? &wg->ln1_b : nullptr);
        dx = std::move(dx2);
    }

    if (dinput != nullptr) {
        *dinput = dx;
    }
    if (wgrads != nullptr) {
        for (int t = 0; t < L; ++t) {
            const S* g = dx.row(t);
            S* pg = wgrads->pos_emb.row(t);
            for (int j = 0; j < d; ++j) {
                pg[j] += g[j];
            }
            const int id = ids[static_cast<size_t>(t)];
            if (id < cfg.vocab_size) {
                S* tg = wgrads->tok_emb.row(id);
                for (int j = 0; j < d; ++j) {
                    tg[j] += g[j];
                }
            }
        }
    }
}

template <typename S>
LogProbs Engine<S>::logprobs(const Mat<S>& ext, const std::vector<int>& ids) const {
    Mat<S> logits;
    forward(ext, ids, 0, static_cast<int>(ids.size()), nullptr, logits);
    LogProbs lp(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        const S* row = logits.row(r);
        S mx = row[0];
        for (int j = 1; j < logits.cols; ++j) {
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            z += std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
        }
        const double lse = static_cast<double>(mx) + std::log(z);
        double* out = lp.row(r);
        for (int j = 0; j < logits.cols; ++j) {
            out[j] = static_cast<double>(row[j]) - lse;
        }
    }
    return lp;
}

template <typename S>
double Engine<S>::score(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                        const std::vector<int>& continuation_ids) const {
    check_score_args(ext, prompt_ids, continuation_ids);
    std::vector<int> ids = prompt_ids;
    ids.insert(ids.end(), continuation_ids.begin(), continuation_ids.end());
    const int m = static_cast<int>(prompt_ids.size());
    Mat<S> logits;
    forward(ext, ids, m - 1, static_cast<int>(ids.size()) - 1, nullptr, logits);
    return scored_sum(logits, continuation_ids, nullptr, nullptr);
}

template <typename S>
double Engine<S>::score_grad(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                             const std::vector<int>& continuation_ids, Mat<S>* dinput,
                             WeightsT<S>* wgrads) const {
    check_score_args(ext, prompt_ids, continuation_ids);
    std::vector<int> ids = prompt_ids;
    ids.insert(ids.end(), continuation_ids.begin(), continuation_ids.end());
    const int m = static_cast<int>(prompt_ids.size());
    Stash stash;
    Mat<S> logits;
    forward(ext, ids, m - 1, static_cast<int>(ids.size()) - 1, &stash, logits);
    Mat<S> dlogits;
    const double total = scored_sum(logits, continuation_ids, &dlogits, nullptr);
    backward(ids, m - 1, dlogits, stash, dinput, wgrads);
    return total;
}

template <typename S>
ScoredTokens Engine<S>::score_tokens(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                                     const std::vector<int>& continuation_ids) const {
    check_score_args(ext, prompt_ids, continuation_ids);
    std::vector<int> ids = prompt_ids;
    ids.insert(ids.end(), continuation_ids.begin(), continuation_ids.end());
    const int m = static_cast<int>(prompt_ids.size());
    Mat<S> logits;
    forward(ext, ids, m - 1, static_cast<int>(ids.size()) - 1, nullptr, logits);
    ScoredTokens out;
    out.nll.reserve(continuation_ids.size());
    out.argmax.reserve(continuation_ids.size());
    scored_sum(logits, continuation_ids, nullptr, &out);
    return out;
}

template <typename S>
std::vector<S> Engine<S>::last_logits(const Mat<S>& ext, const std::vector<int>& ids) const {
    Mat<S> logits;
    const int L = static_cast<int>(ids.size());
    forward(ext, ids, L - 1, L, nullptr, logits);
    return std::vector<S>(logits.row(0), logits.row(0) + logits.cols);
}

template class Engine<float>;
template class Engine<double>;

}  // namespace xp
