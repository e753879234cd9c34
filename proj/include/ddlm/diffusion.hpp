#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddlm/ops.hpp"
#include "ddlm/random.hpp"
#include "ddlm/tensor.hpp"

namespace ddlm {

// Linear absorbing-state schedule: alpha(t) = 1 - t is the probability a
// token survives unmasked at time t, and the matching loss reweighting is
// w(t) = 1/t.
struct NoiseSchedule {
    double alpha(double t) const { return 1.0 - t; }
    double base_weight(double t) const {
        if (t <= 0.0) throw UsageError("base_weight: t must be positive, got " + std::to_string(t));
        return 1.0 / t;
    }
};

// Token-level reweighting config. p is the geometric sharpness: small p
// spreads a clean token's influence across the whole sequence, large p
// concentrates it on close neighbors. weight_floor lifts masked-position
// weights that would otherwise vanish (fully masked context).
struct CartConfig {
    double p = 0.5;
    bool enabled = false;
    double weight_floor = 0.0;

    void validate() const {
        if (!(p > 0.0 && p <= 1.0))
            throw UsageError("CartConfig: p must be in (0,1], got " + std::to_string(p));
        if (weight_floor < 0.0) throw UsageError("CartConfig: weight_floor must be >= 0");
    }
};

// One corrupted training batch: clean ids, noised ids, per-sequence time,
// and the mask/protected flags. mask_flags[i] holds exactly when xt[i] is
// the MASK id; protected positions are never masked.
struct CorruptedBatch {
    int batch = 0;
    int length = 0;
    std::vector<int> x0;
    std::vector<int> xt;
    std::vector<double> t;              // [batch]
    std::vector<uint8_t> mask_flags;    // [batch*length]
    std::vector<uint8_t> protected_flags;  // [batch*length]

    size_t at(int b, int n) const { return size_t(b) * size_t(length) + size_t(n); }
};

// Forward corruption: every unprotected position is independently replaced
// by MASK with probability t, drawn from a stream forked per (sequence,
// position) so the draw at one position never depends on any other.
inline CorruptedBatch mask_sequence(const std::vector<int>& x0, int batch, int length,
                                    const std::vector<double>& t,
                                    const std::vector<uint8_t>& protected_flags, int mask_id,
                                    const RandomStream& rng) {
    if (x0.size() != size_t(batch) * size_t(length) || protected_flags.size() != x0.size())
        throw ShapeError("mask_sequence: x0/protected size mismatch");
    if (t.size() != size_t(batch)) throw ShapeError("mask_sequence: need one t per sequence");
    CorruptedBatch out;
    out.batch = batch;
    out.length = length;
    out.x0 = x0;
    out.xt = x0;
    out.t = t;
    out.mask_flags.assign(x0.size(), 0);
    out.protected_flags = protected_flags;
    for (int b = 0; b < batch; ++b) {
        if (!(t[size_t(b)] >= 0.0 && t[size_t(b)] <= 1.0))
            throw UsageError("mask_sequence: t must lie in [0,1], got " + std::to_string(t[size_t(b)]));
        RandomStream seq = rng.fork(uint64_t(b));
        for (int n = 0; n < length; ++n) {
            const size_t i = out.at(b, n);
            if (protected_flags[i]) continue;
            if (seq.fork(uint64_t(n)).uniform() < t[size_t(b)]) {
                out.xt[i] = mask_id;
                out.mask_flags[i] = 1;
            }
        }
    }
    return out;
}

// Geo(p, k) = p (1-p)^k on support k in {0, 1, 2, ...}. An adjacent clean
// token (distance 1) therefore contributes p, the maximal single-token
// term, and each side of a masked position sums to at most 1.
inline double geometric_pmf(double p, long k) {
    if (!(p > 0.0 && p <= 1.0))
        throw UsageError("geometric_pmf: p must be in (0,1], got " + std::to_string(p));
    if (k < 0) throw UsageError("geometric_pmf: k must be >= 0, got " + std::to_string(k));
    return p * std::pow(1.0 - p, double(k));
}

// Context-adaptive weights: at each masked position n,
//   w(n) = 1/2 * sum_i 1[xt[i] != MASK] * Geo(p, |n-i|-1),
// 0 at unmasked positions. With the two-sided 1/2 normalization the weight
// is always in [0, 1].
inline std::vector<double> cart_weights(const std::vector<int>& xt, int batch, int length,
                                        int mask_id, const CartConfig& cart) {
    cart.validate();
    if (xt.size() != size_t(batch) * size_t(length)) throw ShapeError("cart_weights: xt size mismatch");
    std::vector<double> w(xt.size(), 0.0);
    for (int b = 0; b < batch; ++b) {
        const size_t base = size_t(b) * size_t(length);
        for (int n = 0; n < length; ++n) {
            if (xt[base + size_t(n)] != mask_id) continue;  // clean positions carry no loss
            double acc = 0.0;
            for (int i = 0; i < length; ++i) {
                // the i == n term is excluded by the clean-token indicator
                if (xt[base + size_t(i)] == mask_id) continue;
                acc += geometric_pmf(cart.p, std::labs(long(n) - long(i)) - 1);
            }
            double wn = 0.5 * acc;
            if (cart.weight_floor > 0.0 && wn < cart.weight_floor) wn = cart.weight_floor;
            w[base + size_t(n)] = wn;
        }
    }
    return w;
}

// Weighted denoising loss. Shift alignment: the target for logits position
// n-1 is x0[n], so a masked position n is scored at row n-1 and the final
// row always carries weight 0. Per-position weight is 1/t (base) or the
// context-adaptive weight (cart present) at masked positions, 0 elsewhere.
// The weighted sum is divided by the sequence length and averaged over the
// batch.
inline Tensor diffusion_loss(const Tensor& logits, const CorruptedBatch& batch,
                             const NoiseSchedule& schedule, int mask_id,
                             const CartConfig* cart = nullptr) {
    const int b = batch.batch, l = batch.length;
    if (logits.rank() != 3 || logits.dim(0) != b || logits.dim(1) != l)
        throw ShapeError("diffusion_loss: logits " + shape_str(logits.shape()) + " do not match batch [" +
                         std::to_string(b) + "," + std::to_string(l) + "]");
    const int v = logits.dim(2);

    std::vector<int> targets(size_t(b) * size_t(l), 0);
    std::vector<double> weights(size_t(b) * size_t(l), 0.0);
    std::vector<double> cw;
    if (cart && cart->enabled) cw = cart_weights(batch.xt, b, l, mask_id, *cart);

    for (int bb = 0; bb < b; ++bb) {
        bool any_masked = false;
        for (int n = 0; n < l; ++n) any_masked = any_masked || batch.mask_flags[batch.at(bb, n)];
        if (!any_masked) continue;  // whole sequence contributes zero terms
        const double base_w = (cart && cart->enabled) ? 0.0 : schedule.base_weight(batch.t[size_t(bb)]);
        for (int n = 1; n < l; ++n) {
            const size_t i = batch.at(bb, n);
            if (!batch.mask_flags[i]) continue;
            const size_t row = batch.at(bb, n - 1);  // shifted head: h_{n-1} predicts x^n
            targets[row] = batch.x0[i];
            weights[row] = (cart && cart->enabled) ? cw[i] : base_w;
        }
    }
    Tensor flat = reshape(logits, {b * l, v});
    Tensor total = masked_cross_entropy(flat, targets, weights);
    return scale(total, 1.0 / (double(l) * double(b)));
}

// SFT corruption: BOS and the whole prompt stay clean and carry no loss;
// only response positions are noised.
inline CorruptedBatch sft_corrupt(const std::vector<int>& prompt_ids,
                                  const std::vector<int>& response_ids, double t,
                                  const RandomStream& rng, int bos_id, int mask_id,
                                  int max_seq_len) {
    const size_t total = 1 + prompt_ids.size() + response_ids.size();
    if (int(total) > max_seq_len)
        throw CapacityError("sft_corrupt: prompt+response length " + std::to_string(total) +
                            " exceeds max_seq_len " + std::to_string(max_seq_len));
    std::vector<int> x0;
    x0.reserve(total);
    x0.push_back(bos_id);
    x0.insert(x0.end(), prompt_ids.begin(), prompt_ids.end());
    x0.insert(x0.end(), response_ids.begin(), response_ids.end());
    std::vector<uint8_t> prot(total, 0);
    for (size_t i = 0; i <= prompt_ids.size(); ++i) prot[i] = 1;  // BOS + prompt
    return mask_sequence(x0, 1, int(total), {t}, prot, mask_id, rng);
}

}  // namespace ddlm
