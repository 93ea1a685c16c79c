#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mvdetr/tensor.hpp"

namespace mvdetr {

enum class InitSpec { uniform_fan_in, zeros, ones };

// Registry of named parameters and buffers. Names form the checkpoint
// layout ("geometry.embed.weight"); registration order is the iteration
// order everywhere, so checkpoints and optimizer state are stable.
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        TensorT<T> tensor;
        bool trainable;
    };

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    TensorT<T> parameter(const std::string& name, std::vector<int> shape, InitSpec init,
                         int fan_in = 0) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<T> data(n, T(0));
        switch (init) {
            case InitSpec::zeros:
                break;
            case InitSpec::ones:
                std::fill(data.begin(), data.end(), T(1));
                break;
            case InitSpec::uniform_fan_in: {
                if (fan_in <= 0) throw ContractError("parameter: fan_in required for uniform init");
                // Streams are keyed by parameter name, so adding a
                // parameter never perturbs the init of the others.
                Rng rng = Rng::substream(seed_, name);
                double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
        }
        auto t = TensorT<T>::from_data(std::move(shape), std::move(data), true);
        insert(name, t, true);
        return t;
    }

    TensorT<T> buffer(const std::string& name, std::vector<int> shape, T fill = T(0)) {
        auto t = TensorT<T>::full(std::move(shape), fill);
        insert(name, t, false);
        return t;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Entry* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_)
            if (e.trainable) {
                e.tensor.node().ensure_grad();
                std::fill(e.tensor.node().grad.begin(), e.tensor.node().grad.end(), T(0));
            }
    }

    std::uint64_t seed() const { return seed_; }

private:
    void insert(const std::string& name, TensorT<T> t, bool trainable) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t), trainable});
    }

    std::uint64_t seed_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
struct LinearLayer {
    TensorT<T> w, b;

    static LinearLayer create(ParamStore<T>& ps, const std::string& prefix, int in, int out) {
        return {ps.parameter(prefix + ".weight", {in, out}, InitSpec::uniform_fan_in, in),
                ps.parameter(prefix + ".bias", {out}, InitSpec::zeros)};
    }

    TensorT<T> operator()(const TensorT<T>& x) const { return linear(x, w, b); }
};

template <class T>
struct BatchNormLayer {
    TensorT<T> gamma, beta, run_mean, run_var;

    static BatchNormLayer create(ParamStore<T>& ps, const std::string& prefix, int channels) {
        return {ps.parameter(prefix + ".gamma", {channels}, InitSpec::ones),
                ps.parameter(prefix + ".beta", {channels}, InitSpec::zeros),
                ps.buffer(prefix + ".running_mean", {channels}, T(0)),
                ps.buffer(prefix + ".running_var", {channels}, T(1))};
    }

    TensorT<T> operator()(const TensorT<T>& x, BnMode mode) const {
        BnStats<T> stats{run_mean.data(), run_var.data()};
        auto y = batchnorm(x, gamma, beta, stats, mode);
        if (mode == BnMode::train) {
            const_cast<TensorT<T>&>(run_mean).mutable_data() = stats.mean;
            const_cast<TensorT<T>&>(run_var).mutable_data() = stats.var;
        }
        return y;
    }
};

template <class T>
struct LayerNormLayer {
    TensorT<T> gamma, beta;

    static LayerNormLayer create(ParamStore<T>& ps, const std::string& prefix, int channels) {
        return {ps.parameter(prefix + ".gamma", {channels}, InitSpec::ones),
                ps.parameter(prefix + ".beta", {channels}, InitSpec::zeros)};
    }

    TensorT<T> operator()(const TensorT<T>& x) const { return layernorm_rows(x, gamma, beta); }
};

// Checkpoint file: 8-byte magic "MVDETRW1", u64 LE header length, UTF-8
// JSON header mapping name -> {shape, offset}, then raw LE f32 blobs.
void save_checkpoint(const std::string& path, const ParamStore<float>& store);

// Validates shapes against the store; missing/extra names are an error
// unless partial is set (used for externally converted visual weights).
void load_checkpoint(const std::string& path, ParamStore<float>& store, bool partial = false);

// name -> shape listing, for checkpoint inspection without a model.
std::vector<std::pair<std::string, std::vector<int>>> inspect_checkpoint(const std::string& path);

}  // namespace mvdetr
