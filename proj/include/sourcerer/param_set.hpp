#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sourcerer/tensor.hpp"

namespace sourcerer {

struct ParamEntry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Ordered collection of named tensors. Iteration order is insertion order and
/// is stable across save/load, so the flat concatenation of trainable entries
/// (and with it any distance between two parameter sets) is well defined.
class ParamSet {
public:
    std::size_t add(std::string name, Tensor tensor, bool trainable = true) {
        if (index_.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back(ParamEntry{std::move(name), std::move(tensor), trainable});
        return entries_.size() - 1;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("unknown parameter name: " + name);
        return it->second;
    }

    ParamEntry& entry(std::size_t i) { return entries_[i]; }
    const ParamEntry& entry(std::size_t i) const { return entries_[i]; }

    Tensor& at(const std::string& name) { return entries_[index_of(name)].tensor; }
    const Tensor& at(const std::string& name) const { return entries_[index_of(name)].tensor; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.numel();
        return n;
    }

    /// Checks that `other` has the same entry names, order, shapes and
    /// trainable flags; throws naming the first mismatch.
    void require_aligned(const ParamSet& other, const std::string& what) const {
        if (entries_.size() != other.entries_.size())
            throw std::invalid_argument(what + ": entry count mismatch (" +
                                        std::to_string(entries_.size()) + " vs " +
                                        std::to_string(other.entries_.size()) + ")");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name)
                throw std::invalid_argument(what + ": name mismatch at entry " +
                                            std::to_string(i) + " (" + a.name + " vs " +
                                            b.name + ")");
            if (a.tensor.shape != b.tensor.shape)
                throw ShapeError(what + ": shape mismatch for " + a.name + " (" +
                                 shape_string(a.tensor) + " vs " + shape_string(b.tensor) +
                                 ")");
        }
    }

    /// Squared L2 distance over trainable entries, accumulated in 64-bit.
    double squared_distance(const ParamSet& reference) const {
        require_aligned(reference, "squared_distance");
        double acc = 0.0;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!entries_[i].trainable) continue;
            const auto& a = entries_[i].tensor.data;
            const auto& b = reference.entries_[i].tensor.data;
            for (std::size_t j = 0; j < a.size(); ++j) {
                const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
                acc += d * d;
            }
        }
        return acc;
    }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sourcerer
