#include "credmort/cart.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace credmort {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Node {
    std::size_t lo = 0, hi = 0;  // point range [lo, hi)
    double mean = 0.0;
    double sse = 0.0;
    double threshold = 0.0;  // x < threshold goes left
    int left = -1, right = -1;
    double prune_alpha = kInf;

    [[nodiscard]] bool leaf() const noexcept { return left < 0; }
};

class Tree {
public:
    Tree(std::vector<double> x, std::vector<double> y, std::vector<double> w)
        : x_(std::move(x)), y_(std::move(y)), w_(std::move(w)) {
        nodes_.reserve(2 * x_.size());
        make_node(0, x_.size());
        // Gains below rounding noise of the sums of squares do not count.
        double sq = 0.0;
        for (std::size_t i = 0; i < y_.size(); ++i) sq += w_[i] * y_[i] * y_[i];
        min_gain_ = std::max({1e-12 * nodes_[0].sse, 1e-12 * sq, 1e-300});
        grow(0);
        alphas_ = prune_sequence();
    }

    [[nodiscard]] const std::vector<double>& alphas() const noexcept { return alphas_; }

    [[nodiscard]] double predict(double x, double alpha) const {
        int n = 0;
        while (!stops(nodes_[n], alpha)) n = x < nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
        return nodes_[n].mean;
    }

    /// Leaves of the subtree at `alpha`, in covariate order.
    [[nodiscard]] std::vector<const Node*> leaves(double alpha) const {
        std::vector<const Node*> out;
        collect(0, alpha, out);
        return out;
    }

    [[nodiscard]] double x(std::size_t i) const { return x_[i]; }

private:
    static bool stops(const Node& n, double alpha) { return n.leaf() || n.prune_alpha <= alpha; }

    int make_node(std::size_t lo, std::size_t hi) {
        Node n;
        n.lo = lo;
        n.hi = hi;
        double sw = 0.0, swy = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            sw += w_[i];
            swy += w_[i] * y_[i];
        }
        n.mean = sw > 0.0 ? swy / sw : 0.0;
        for (std::size_t i = lo; i < hi; ++i) n.sse += w_[i] * (y_[i] - n.mean) * (y_[i] - n.mean);
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size() - 1);
    }

    void grow(int id) {
        const std::size_t lo = nodes_[id].lo, hi = nodes_[id].hi;
        if (hi - lo < 2) return;
        // Weighted SSE of a segment from running sums, centred on the node mean.
        const double c = nodes_[id].mean;
        double tw = 0.0, twy = 0.0, twyy = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double d = y_[i] - c;
            tw += w_[i];
            twy += w_[i] * d;
            twyy += w_[i] * d * d;
        }
        auto sse = [](double sw, double swy, double swyy) { return sw > 0.0 ? swyy - swy * swy / sw : 0.0; };
        double best = kInf;
        std::size_t split = 0;
        double lw = 0.0, lwy = 0.0, lwyy = 0.0;
        for (std::size_t k = lo + 1; k < hi; ++k) {
            const double d = y_[k - 1] - c;
            lw += w_[k - 1];
            lwy += w_[k - 1] * d;
            lwyy += w_[k - 1] * d * d;
            if (!(x_[k - 1] < x_[k])) continue;
            const double s = sse(lw, lwy, lwyy) + sse(tw - lw, twy - lwy, twyy - lwyy);
            if (s < best) {
                best = s;
                split = k;
            }
        }
        if (split == 0 || nodes_[id].sse - best <= min_gain_) return;
        const double threshold = 0.5 * (x_[split - 1] + x_[split]);
        const int l = make_node(lo, split);
        const int r = make_node(split, hi);
        nodes_[id].left = l;
        nodes_[id].right = r;
        nodes_[id].threshold = threshold;
        grow(l);
        grow(r);
    }

    // Weakest-link pruning: assigns each internal node the penalty at which it collapses.
    std::vector<double> prune_sequence() {
        std::vector<double> seq;
        double last = 0.0;
        while (!nodes_[0].leaf() && nodes_[0].prune_alpha == kInf) {
            std::vector<double> g(nodes_.size(), kInf);
            double gmin = kInf;
            subtree_stats(0, g, gmin);
            const double a = std::max(gmin, last);
            const double tol = 1e-10 * std::max(std::abs(gmin), 1e-300);
            for (std::size_t i = 0; i < nodes_.size(); ++i) {
                if (g[i] <= gmin + tol && nodes_[i].prune_alpha == kInf) nodes_[i].prune_alpha = a;
            }
            seq.push_back(a);
            last = a;
        }
        return seq;
    }

    struct Stats {
        double r;
        int leaves;
    };

    Stats subtree_stats(int id, std::vector<double>& g, double& gmin) {
        const Node& n = nodes_[id];
        if (n.leaf() || n.prune_alpha < kInf) return {n.sse, 1};
        const auto l = subtree_stats(n.left, g, gmin);
        const auto r = subtree_stats(n.right, g, gmin);
        const Stats s{l.r + r.r, l.leaves + r.leaves};
        g[static_cast<std::size_t>(id)] = std::max(0.0, (n.sse - s.r) / static_cast<double>(s.leaves - 1));
        gmin = std::min(gmin, g[static_cast<std::size_t>(id)]);
        return s;
    }

    void collect(int id, double alpha, std::vector<const Node*>& out) const {
        const Node& n = nodes_[id];
        if (stops(n, alpha)) {
            out.push_back(&n);
            return;
        }
        collect(n.left, alpha, out);
        collect(n.right, alpha, out);
    }

    std::vector<double> x_, y_, w_;
    std::vector<Node> nodes_;
    std::vector<double> alphas_;
    double min_gain_ = 0.0;
};

}  // namespace

double CartFit::predict(double x) const {
    if (bin_starts.empty()) throw std::logic_error("empty CART fit");
    auto it = std::upper_bound(bin_starts.begin(), bin_starts.end(), x);
    const auto i = it == bin_starts.begin() ? 0 : static_cast<std::size_t>(it - bin_starts.begin()) - 1;
    return bin_means[i];
}

CartFit cart_bin(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                 const CartOptions& options) {
    const std::size_t n = x.size();
    if (n == 0) throw std::invalid_argument("cart_bin needs at least one point");
    if (y.size() != n) throw std::invalid_argument("cart_bin: x and y differ in length");
    if (!weights.empty() && weights.size() != n) throw std::invalid_argument("cart_bin: weights differ in length");
    for (std::size_t i = 1; i < n; ++i) {
        if (!(x[i - 1] < x[i])) throw std::invalid_argument("cart_bin: x must be strictly increasing");
    }
    std::vector<double> w = weights.empty() ? std::vector<double>(n, 1.0) : std::vector<double>(weights.begin(), weights.end());
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("cart_bin: weights must be finite and >= 0");
    }
    for (double v : y) {
        if (!std::isfinite(v)) throw std::invalid_argument("cart_bin: values must be finite");
    }

    const Tree full({x.begin(), x.end()}, {y.begin(), y.end()}, w);
    const auto& a = full.alphas();
    const std::size_t m = a.size();

    // Subtree k is optimal for penalties in [a_k, a_{k+1}); score each at a geometric midpoint.
    std::vector<double> probe(m + 1);
    probe[0] = 0.0;
    for (std::size_t k = 1; k < m; ++k) probe[k] = std::sqrt(a[k - 1] * a[k]);
    if (m > 0) probe[m] = a[m - 1];

    std::size_t chosen = m;
    const std::size_t folds = std::min<std::size_t>(static_cast<std::size_t>(std::max(options.folds, 2)), n);
    if (m > 0 && n >= 2) {
        std::vector<std::vector<double>> err(m + 1, std::vector<double>(n, 0.0));
        for (std::size_t f = 0; f < folds; ++f) {
            std::vector<double> tx, ty, tw;
            for (std::size_t i = 0; i < n; ++i) {
                if (i % folds == f) continue;
                tx.push_back(x[i]);
                ty.push_back(y[i]);
                tw.push_back(w[i]);
            }
            const Tree t(std::move(tx), std::move(ty), std::move(tw));
            for (std::size_t i = f; i < n; i += folds) {
                for (std::size_t k = 0; k <= m; ++k) {
                    const double d = y[i] - t.predict(x[i], probe[k]);
                    err[k][i] = w[i] * d * d;
                }
            }
        }
        std::vector<double> cv(m + 1), se(m + 1);
        for (std::size_t k = 0; k <= m; ++k) {
            const double s = std::accumulate(err[k].begin(), err[k].end(), 0.0);
            const double mu = s / static_cast<double>(n);
            double ss = 0.0;
            for (double e : err[k]) ss += (e - mu) * (e - mu);
            cv[k] = s;
            se[k] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1) * static_cast<double>(n)) : 0.0;
        }
        const auto kmin = static_cast<std::size_t>(std::min_element(cv.begin(), cv.end()) - cv.begin());
        chosen = kmin;
        if (options.one_se_rule) {
            const double limit = cv[kmin] + se[kmin];
            for (std::size_t k = m + 1; k-- > kmin;) {
                if (cv[k] <= limit) {
                    chosen = k;
                    break;
                }
            }
        }
    }

    CartFit out;
    out.alpha = chosen == 0 ? 0.0 : a[chosen - 1];
    const auto leaves = full.leaves(out.alpha);
    out.fitted.resize(n);
    for (const Node* leaf : leaves) {
        out.bin_starts.push_back(full.x(leaf->lo));
        out.bin_means.push_back(leaf->mean);
        for (std::size_t i = leaf->lo; i < leaf->hi; ++i) out.fitted[i] = leaf->mean;
    }
    return out;
}

}  // namespace credmort
