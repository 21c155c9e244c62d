#pragma once

#include <map>
#include <set>
#include <string>

#include "nfce/errors.hpp"
#include "nfce/tape.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

// Named model state: trainable parameters plus auxiliary buffers
// (e.g. normalization running statistics). Ordered map so that iteration,
// initialization, and serialization order are deterministic.
class ParamStore {
public:
    void add(const std::string& name, Tensor t, bool trainable = true) {
        NFCE_REQUIRE(!tensors_.count(name), "duplicate parameter: " + name);
        tensors_.emplace(name, std::move(t));
        if (trainable) trainable_.insert(name);
    }

    bool has(const std::string& name) const { return tensors_.count(name) > 0; }

    Tensor& get(const std::string& name) {
        auto it = tensors_.find(name);
        NFCE_REQUIRE(it != tensors_.end(), "unknown parameter: " + name);
        return it->second;
    }

    const Tensor& get(const std::string& name) const {
        auto it = tensors_.find(name);
        NFCE_REQUIRE(it != tensors_.end(), "unknown parameter: " + name);
        return it->second;
    }

    bool is_trainable(const std::string& name) const { return trainable_.count(name) > 0; }

    const std::map<std::string, Tensor>& all() const { return tensors_; }
    std::map<std::string, Tensor>& all() { return tensors_; }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& name : trainable_) n += tensors_.at(name).size();
        return n;
    }

private:
    std::map<std::string, Tensor> tensors_;
    std::set<std::string> trainable_;
};

// Binds ParamStore entries onto a tape once per forward pass, caching the
// handles so each parameter appears as a single tape node.
class Binder {
public:
    Binder(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

    // Trainable parameter leaf (gradient is produced for it).
    Var operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        Var v = store_.is_trainable(name) ? tape_.param(store_.get(name), name)
                                          : tape_.leaf(store_.get(name));
        cache_.emplace(name, v);
        return v;
    }

    ParamStore& store() { return store_; }
    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    ParamStore& store_;
    std::map<std::string, Var> cache_;
};

}  // namespace nfce
