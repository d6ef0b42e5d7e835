#include "ardx/ar_model.hpp"

#include <atomic>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ardx/checkpoint.hpp"
#include "ardx/made.hpp"
#include "ardx/pixel_ar.hpp"

namespace ardx {

void parallel_for(int n, const std::function<void(int)>& fn, int threads) {
    int t = threads > 0 ? threads : int(std::thread::hardware_concurrency());
    if (t < 1) t = 1;
    if (t > n) t = n;
    if (t <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(size_t(t));
    for (int w = 0; w < t; ++w)
        pool.emplace_back([&] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                std::scoped_lock lk(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

Tensor batch_example(const Tensor& batch, int i) {
    if (batch.ndim() < 2) throw std::invalid_argument("batch_example: batch must have a lead axis");
    const int n = batch.shape[0];
    if (i < 0 || i >= n) throw std::invalid_argument("batch_example: index out of range");
    Shape s(batch.shape.begin() + 1, batch.shape.end());
    Tensor out(s);
    const size_t m = out.data.size();
    std::memcpy(out.data.data(), batch.data.data() + size_t(i) * m, m * sizeof(double));
    return out;
}

Tensor batch_stack(const std::vector<Tensor>& examples) {
    if (examples.empty()) throw std::invalid_argument("batch_stack: empty");
    Shape s = examples[0].shape;
    Shape os;
    os.push_back(int(examples.size()));
    os.insert(os.end(), s.begin(), s.end());
    Tensor out(os);
    const size_t m = examples[0].data.size();
    for (size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].shape != s) throw std::invalid_argument("batch_stack: shape mismatch");
        std::memcpy(out.data.data() + i * m, examples[i].data.data(), m * sizeof(double));
    }
    return out;
}

std::vector<double> logprob_batch(const ArModel& model, const Tensor& batch) {
    if (batch.ndim() < 1) throw std::invalid_argument("logprob_batch: empty batch");
    const int n = batch.shape[0];
    std::vector<double> out(size_t(n), 0.0);
    if (model.batched_graph()) {
        Tape t;
        const auto bound = model.bind(t, batch, false, false);
        const Tensor& lp = t.val(bound.logprob);
        for (int i = 0; i < n; ++i) out[size_t(i)] = lp[size_t(i)];
    } else {
        parallel_for(n, [&](int i) {
            Tape t;
            const auto bound = model.bind(t, batch_example(batch, i), false, false);
            out[size_t(i)] = t.val(bound.logprob).item();
        });
    }
    return out;
}

std::unique_ptr<ArModel> load_ar_model(const std::string& path) {
    const NamedArrays arrays = load_arrays(path);
    const double kind = find_array(arrays, "meta.kind").item();
    if (kind == 0.0) return std::make_unique<MadeModel>(MadeModel::load_file(path));
    if (kind == 1.0) return std::make_unique<PixelArModel>(PixelArModel::load_file(path));
    throw std::runtime_error("checkpoint " + path + ": unknown model kind");
}

} // namespace ardx
