#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sourcerer {

/// Per-band 2nd/98th percentile values estimated on the source domain. Stored
/// with a model so every later dataset (target train, target test) is scaled
/// exactly the way the source data were.
struct NormStats {
    std::vector<float> p2;
    std::vector<float> p98;

    std::size_t n_bands() const { return p2.size(); }

    void validate() const {
        if (p2.size() != p98.size())
            throw std::invalid_argument("NormStats: p2/p98 band counts differ");
        for (std::size_t b = 0; b < p2.size(); ++b)
            if (!(p98[b] > p2[b]))
                throw std::invalid_argument("NormStats: p98 must exceed p2 for band " +
                                            std::to_string(b));
    }

    bool operator==(const NormStats&) const = default;
};

}  // namespace sourcerer
