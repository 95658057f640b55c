#include <algorithm>
#include <complex>
#include <memory>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>
#include <fmt/format.h>

#include "efield/spectral.hpp"

namespace efield {

namespace {

// FFTW's planner is not re-entrant; execution is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

class RealAutocorrelator {
public:
    explicit RealAutocorrelator(std::size_t size) : size_(size) {
        real_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * size)));
        spectrum_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (size / 2 + 1))));
        if (!real_ || !spectrum_)
            throw std::bad_alloc();
        std::lock_guard lock(planner_mutex());
        const int n = static_cast<int>(size);
        forward_ = fftw_plan_dft_r2c_1d(n, real_.get(), spectrum_.get(), FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_c2r_1d(n, spectrum_.get(), real_.get(), FFTW_ESTIMATE);
    }

    ~RealAutocorrelator() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }

    RealAutocorrelator(const RealAutocorrelator&) = delete;
    RealAutocorrelator& operator=(const RealAutocorrelator&) = delete;

    // out[tau] = sum_t x_t x_{t+tau}, tau = 0..count-1
    std::vector<double> run(std::span<const double> x, std::size_t count) {
        std::fill(real_.get(), real_.get() + size_, 0.0);
        std::copy(x.begin(), x.end(), real_.get());
        fftw_execute(forward_);
        for (std::size_t f = 0; f <= size_ / 2; ++f) {
            const double re = spectrum_.get()[f][0];
            const double im = spectrum_.get()[f][1];
            spectrum_.get()[f][0] = re * re + im * im;
            spectrum_.get()[f][1] = 0.0;
        }
        fftw_execute(inverse_);
        std::vector<double> out(count);
        const double norm = 1.0 / static_cast<double>(size_);
        for (std::size_t t = 0; t < count; ++t)
            out[t] = real_.get()[t] * norm;
        return out;
    }

private:
    std::size_t size_;
    std::unique_ptr<double, FftwFree> real_;
    std::unique_ptr<fftw_complex, FftwFree> spectrum_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

std::size_t padded_size(std::size_t n) {
    std::size_t m = 2;
    while (m < 2 * n)
        m *= 2;
    return m;
}

} // namespace

std::vector<double> lagged_products_fft(std::span<const double> signal) {
    if (signal.empty())
        return {};
    RealAutocorrelator ac(padded_size(signal.size()));
    return ac.run(signal, signal.size());
}

std::vector<double> autocovariance(std::span<const double> signal, std::size_t tau_max) {
    const std::size_t n = signal.size();
    if (n == 0 || tau_max >= n)
        throw std::invalid_argument(fmt::format("tau_max {} must be below signal length {}", tau_max, n));
    RealAutocorrelator ac(padded_size(n));
    auto out = ac.run(signal, tau_max + 1);
    for (double& v : out)
        v /= static_cast<double>(n);
    return out;
}

} // namespace efield
