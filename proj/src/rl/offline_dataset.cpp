#include "dnr/rl/offline_dataset.hpp"

#include <algorithm>

#include "dnr/error.hpp"

namespace dnr::rl {

OfflineDataset OfflineDataset::from_batch(const grid::Network& net, const env::TransitionBatch& batch,
                                          std::size_t begin, std::size_t end) {
    require(begin <= end && end <= batch.rows.size(), "OfflineDataset: row range outside the batch");
    require(batch.series.buses() == net.bus_count(), "OfflineDataset: batch does not match the network");
    OfflineDataset d;
    d.m_ = net.branch_count();
    d.begin_ = begin;
    const std::size_t n = end - begin;
    const std::size_t dim = env::feature_dim(net);
    d.states_.resize(n, dim);
    d.next_states_.resize(n, dim);
    d.actions_.resize(n);
    d.rewards_.resize(n);
    d.mask_id_.resize(n);
    d.next_mask_id_.resize(n);

    std::map<topo::Configuration, std::size_t> seen;
    auto mask_index = [&](const topo::Configuration& c) {
        auto it = seen.find(c);
        if (it != seen.end()) return it->second;
        d.masks_.push_back(topo::switch_pair_mask(net, c));
        return seen[c] = d.masks_.size() - 1;
    };

    for (std::size_t k = 0; k < n; ++k) {
        const auto& r = batch.rows[begin + k];
        const auto s = env::encode_state(net, batch.norms, batch.series.frame(r.t), r.config, r.t);
        const auto s2 = env::encode_state(net, batch.norms, batch.series.frame(r.t + 1), r.next_config, r.t + 1);
        std::copy(s.begin(), s.end(), d.states_.row(k).begin());
        std::copy(s2.begin(), s2.end(), d.next_states_.row(k).begin());
        d.mask_id_[k] = mask_index(r.config);
        d.next_mask_id_[k] = mask_index(r.next_config);
        if (!d.masks_[d.mask_id_[k]].allows(r.action))
            throw ValidationError("recorded action at hour " + std::to_string(r.t) + " is infeasible");
        d.actions_[k] = r.action.close * static_cast<int>(d.m_) + r.action.open;
        d.rewards_[k] = r.reward;
    }
    return d;
}

nn::Matrix OfflineDataset::gather_states(std::span<const std::size_t> rows, bool next) const {
    const auto& src = next ? next_states_ : states_;
    nn::Matrix out(rows.size(), src.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto r = src.row(rows[k]);
        std::copy(r.begin(), r.end(), out.row(k).begin());
    }
    return out;
}

}  // namespace dnr::rl
