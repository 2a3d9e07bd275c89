#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dnr/env/transitions.hpp"
#include "dnr/nn/matrix.hpp"

namespace dnr::rl {

/// Transitions in network-ready form. Masks are shared between rows with the
/// same configuration. Actions are flattened cells close * m + open.
class OfflineDataset {
public:
    OfflineDataset() = default;
    /// Rows [begin, end) of the batch; features use the batch's normalisation.
    static OfflineDataset from_batch(const grid::Network& net, const env::TransitionBatch& batch,
                                     std::size_t begin, std::size_t end);
    /// Training split of the batch.
    static OfflineDataset training(const grid::Network& net, const env::TransitionBatch& batch) {
        return from_batch(net, batch, 0, batch.train_rows);
    }

    std::size_t size() const { return actions_.size(); }
    std::size_t state_dim() const { return states_.cols; }
    std::size_t branches() const { return m_; }
    std::size_t cells() const { return m_ * m_; }

    std::span<const double> state(std::size_t k) const { return states_.row(k); }
    std::span<const double> next_state(std::size_t k) const { return next_states_.row(k); }
    int action(std::size_t k) const { return actions_[k]; }
    double reward(std::size_t k) const { return rewards_[k]; }
    std::span<const std::uint8_t> mask(std::size_t k) const { return masks_[mask_id_[k]].cells(); }
    std::span<const std::uint8_t> next_mask(std::size_t k) const { return masks_[next_mask_id_[k]].cells(); }
    const topo::SwitchPairMask& mask_of(std::size_t k) const { return masks_[mask_id_[k]]; }
    const topo::SwitchPairMask& next_mask_of(std::size_t k) const { return masks_[next_mask_id_[k]]; }
    /// Index of the source row in the transition batch.
    std::size_t source_row(std::size_t k) const { return begin_ + k; }

    /// Gathers rows of states (or next states) into a batch matrix.
    nn::Matrix gather_states(std::span<const std::size_t> rows, bool next = false) const;

private:
    std::size_t m_ = 0;
    std::size_t begin_ = 0;
    nn::Matrix states_;
    nn::Matrix next_states_;
    std::vector<int> actions_;
    std::vector<double> rewards_;
    std::vector<std::size_t> mask_id_;
    std::vector<std::size_t> next_mask_id_;
    std::vector<topo::SwitchPairMask> masks_;
};

}  // namespace dnr::rl
