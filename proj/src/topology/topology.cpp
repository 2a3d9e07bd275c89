#include "dnr/topology/topology.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

#include "dnr/error.hpp"

namespace dnr::topo {

using grid::Network;

Configuration Configuration::initial(const Network& net) {
    Configuration c(net.branch_count());
    for (const auto& br : net.branches()) c.set(br.id, br.initially_closed);
    return c;
}

Configuration Configuration::from_string(const std::string& bits) {
    Configuration c(bits.size());
    for (std::size_t k = 0; k < bits.size(); ++k) {
        if (bits[k] != '0' && bits[k] != '1')
            throw ParseError("configuration string must contain only 0/1, got '" +
                             std::string(1, bits[k]) + "'");
        c.bits_[k] = bits[k] == '1' ? 1 : 0;
    }
    return c;
}

std::size_t Configuration::closed_count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

std::size_t Configuration::distance(const Configuration& other) const {
    require(other.size() == size(), "configuration sizes differ");
    std::size_t d = 0;
    for (std::size_t k = 0; k < bits_.size(); ++k) d += bits_[k] != other.bits_[k];
    return d;
}

std::string Configuration::to_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t k = 0; k < bits_.size(); ++k)
        if (bits_[k]) s[k] = '1';
    return s;
}

namespace {

struct DisjointSets {
    std::vector<int> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[b] = a;
        return true;
    }
};

}  // namespace

bool is_radial(const Network& net, const Configuration& config) {
    if (config.size() != net.branch_count()) return false;
    const std::size_t n = net.bus_count();
    // Contracting the substations into one node turns "one substation per tree"
    // into "spanning tree of the contracted graph".
    DisjointSets ds(n);
    const auto& subs = net.substations();
    for (std::size_t k = 1; k < subs.size(); ++k) ds.unite(subs[0], subs[k]);
    std::size_t closed = 0;
    for (const auto& br : net.branches()) {
        if (!config.closed(br.id)) continue;
        ++closed;
        if (!ds.unite(br.from, br.to)) return false;
    }
    // n - n_S + 1 nodes after contraction.
    return closed == n - subs.size();
}

RadialForest build_forest(const Network& net, const Configuration& config) {
    if (!is_radial(net, config)) throw ContractViolation("configuration is not radial");
    const std::size_t n = net.bus_count();
    std::vector<std::vector<std::pair<int, int>>> adj(n);
    for (const auto& br : net.branches()) {
        if (!config.closed(br.id)) continue;
        adj[br.from].push_back({br.to, br.id});
        adj[br.to].push_back({br.from, br.id});
    }
    RadialForest f;
    f.parent_bus.assign(n, -1);
    f.parent_branch.assign(n, -1);
    f.depth.assign(n, 0);
    f.root.assign(n, -1);
    f.order.reserve(n);
    std::queue<int> q;
    for (int s : net.substations()) {
        f.root[s] = s;
        q.push(s);
    }
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        f.order.push_back(u);
        for (auto [v, br] : adj[u]) {
            if (f.root[v] != -1) continue;
            f.root[v] = f.root[u];
            f.parent_bus[v] = u;
            f.parent_branch[v] = br;
            f.depth[v] = f.depth[u] + 1;
            q.push(v);
        }
    }
    return f;
}

std::size_t SwitchPairMask::feasible_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

std::vector<SwitchPair> SwitchPairMask::feasible_pairs() const {
    std::vector<SwitchPair> out;
    for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t j = 0; j < m_; ++j)
            if (cells_[i * m_ + j]) out.push_back({static_cast<int>(i), static_cast<int>(j)});
    return out;
}

std::vector<int> SwitchPairMask::closeable() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < m_; ++i) {
        const auto row = cells_.begin() + static_cast<std::ptrdiff_t>(i * m_);
        if (std::find(row, row + static_cast<std::ptrdiff_t>(m_), 1) != row + static_cast<std::ptrdiff_t>(m_))
            out.push_back(static_cast<int>(i));
    }
    return out;
}

SwitchPairMask switch_pair_mask(const Network& net, const Configuration& config) {
    const RadialForest f = build_forest(net, config);
    const std::size_t m = net.branch_count();
    SwitchPairMask mask(m);
    for (const auto& br : net.branches()) {
        if (config.closed(br.id) || !br.switchable) continue;
        // Walk both endpoints up to their common ancestor. When they hang off
        // different substations the cycle closes through the contracted source,
        // so every branch up to both roots is on it.
        std::vector<int> cycle;
        int u = br.from;
        int v = br.to;
        while (f.depth[u] > f.depth[v]) {
            cycle.push_back(f.parent_branch[u]);
            u = f.parent_bus[u];
        }
        while (f.depth[v] > f.depth[u]) {
            cycle.push_back(f.parent_branch[v]);
            v = f.parent_bus[v];
        }
        while (u != v && f.parent_bus[u] != -1) {
            cycle.push_back(f.parent_branch[u]);
            cycle.push_back(f.parent_branch[v]);
            u = f.parent_bus[u];
            v = f.parent_bus[v];
        }
        bool any = false;
        for (int j : cycle) {
            if (!net.branch(j).switchable) continue;
            mask.set(br.id, j, true);
            any = true;
        }
        if (any) mask.set(br.id, br.id, true);
    }
    return mask;
}

Configuration apply_pair(const SwitchPairMask& mask, const Configuration& config,
                         const SwitchPair& pair) {
    const int m = static_cast<int>(mask.size());
    if (pair.close < 0 || pair.close >= m || pair.open < 0 || pair.open >= m || !mask.allows(pair))
        throw RejectedAction("switch pair (" + std::to_string(pair.close) + ", " +
                             std::to_string(pair.open) + ") is not feasible");
    Configuration next = config;
    if (pair.is_stay()) return next;
    next.set(pair.close, true);
    next.set(pair.open, false);
    return next;
}

Configuration apply_pair(const Network& net, const Configuration& config, const SwitchPair& pair) {
    return apply_pair(switch_pair_mask(net, config), config, pair);
}

SwitchPair canonical_stay(const SwitchPairMask& mask) {
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask(static_cast<int>(i), static_cast<int>(i)))
            return {static_cast<int>(i), static_cast<int>(i)};
    throw ContractViolation("mask has no closeable branch, so no stay cell exists");
}

mpz_class count_radial_configurations(const Network& net) {
    const std::size_t n = net.bus_count();
    // Substations and always-closed branches are contracted first.
    DisjointSets ds(n);
    const auto& subs = net.substations();
    for (std::size_t k = 1; k < subs.size(); ++k) ds.unite(subs[0], subs[k]);
    for (const auto& br : net.branches())
        if (!br.switchable && !ds.unite(br.from, br.to)) return 0;

    std::vector<int> node(n, -1);
    const int source = ds.find(subs[0]);
    int next = 0;
    node[source] = next++;
    for (std::size_t b = 0; b < n; ++b) {
        const int r = ds.find(static_cast<int>(b));
        if (node[r] == -1) node[r] = next++;
    }
    const std::size_t k = static_cast<std::size_t>(next);

    // Laplacian with the source row/column removed (matrix-tree cofactor).
    const std::size_t dim = k - 1;
    if (dim == 0) return 1;
    std::vector<mpz_class> a(dim * dim, 0);
    auto at = [&](std::size_t r, std::size_t c) -> mpz_class& { return a[r * dim + c]; };
    for (const auto& br : net.branches()) {
        if (!br.switchable) continue;
        const int u = node[ds.find(br.from)];
        const int v = node[ds.find(br.to)];
        if (u == v) continue;
        if (u > 0) at(u - 1, u - 1) += 1;
        if (v > 0) at(v - 1, v - 1) += 1;
        if (u > 0 && v > 0) {
            at(u - 1, v - 1) -= 1;
            at(v - 1, u - 1) -= 1;
        }
    }

    // Bareiss fraction-free elimination: every division is exact.
    int sign = 1;
    mpz_class prev = 1;
    for (std::size_t p = 0; p < dim; ++p) {
        if (at(p, p) == 0) {
            std::size_t r = p + 1;
            while (r < dim && at(r, p) == 0) ++r;
            if (r == dim) return 0;
            for (std::size_t c = 0; c < dim; ++c) std::swap(at(p, c), at(r, c));
            sign = -sign;
        }
        for (std::size_t r = p + 1; r < dim; ++r) {
            for (std::size_t c = p + 1; c < dim; ++c) {
                mpz_class t = at(r, c) * at(p, p) - at(r, p) * at(p, c);
                mpz_divexact(t.get_mpz_t(), t.get_mpz_t(), prev.get_mpz_t());
                at(r, c) = std::move(t);
            }
            at(r, p) = 0;
        }
        prev = at(p, p);
    }
    mpz_class det = at(dim - 1, dim - 1);
    return sign > 0 ? det : mpz_class(-det);
}

}  // namespace dnr::topo
