#ifndef RGBADIT_TESTUTIL_HPP
#define RGBADIT_TESTUTIL_HPP

#include <cmath>
#include <vector>

#include "rgbadit/attention.hpp"
#include "rgbadit/tensor.hpp"

namespace rgbadit::testutil {

// Independent per-row attention oracle: plain loops, no Tensor ops, masked
// entries excluded from the softmax by hand.
inline std::vector<double> naive_grouped_attention(const std::vector<double>& q,
                                                   const std::vector<double>& k,
                                                   const std::vector<double>& v,
                                                   const std::vector<double>& mask, int s, int dim,
                                                   int heads,
                                                   const std::vector<double>& wo) {
    const int dh = dim / heads;
    std::vector<double> merged(static_cast<size_t>(s) * dim, 0.0);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < s; ++i) {
            // logits for row i, head h
            std::vector<double> logits(static_cast<size_t>(s));
            for (int j = 0; j < s; ++j) {
                double dot = 0.0;
                for (int c = 0; c < dh; ++c) {
                    dot += q[static_cast<size_t>(i) * dim + h * dh + c] *
                           k[static_cast<size_t>(j) * dim + h * dh + c];
                }
                logits[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
            }
            double mx       = -1e300;
            bool any        = false;
            for (int j = 0; j < s; ++j) {
                if (mask[static_cast<size_t>(i) * s + j] == 0.0) {
                    any = true;
                    mx  = std::max(mx, logits[static_cast<size_t>(j)]);
                }
            }
            if (!any) continue;
            double denom = 0.0;
            std::vector<double> w(static_cast<size_t>(s), 0.0);
            for (int j = 0; j < s; ++j) {
                if (mask[static_cast<size_t>(i) * s + j] == 0.0) {
                    w[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                    denom += w[static_cast<size_t>(j)];
                }
            }
            for (int c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (int j = 0; j < s; ++j) {
                    if (w[static_cast<size_t>(j)] != 0.0) {
                        acc += w[static_cast<size_t>(j)] / denom *
                               v[static_cast<size_t>(j) * dim + h * dh + c];
                    }
                }
                merged[static_cast<size_t>(i) * dim + h * dh + c] = acc;
            }
        }
    }
    // output projection
    std::vector<double> out(static_cast<size_t>(s) * dim, 0.0);
    for (int i = 0; i < s; ++i) {
        for (int l = 0; l < dim; ++l) {
            const double a = merged[static_cast<size_t>(i) * dim + l];
            for (int j = 0; j < dim; ++j) {
                out[static_cast<size_t>(i) * dim + j] += a * wo[static_cast<size_t>(l) * dim + j];
            }
        }
    }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    return max_abs_diff(a.raw(), b.raw());
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.raw().size() != b.raw().size()) return false;
    for (size_t i = 0; i < a.raw().size(); ++i) {
        if (a.raw()[i] != b.raw()[i]) return false;
    }
    return true;
}

}  // namespace rgbadit::testutil

#endif  // RGBADIT_TESTUTIL_HPP
