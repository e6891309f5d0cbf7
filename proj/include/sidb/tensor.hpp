#pragma once

#include <cstddef>
#include <vector>

namespace sidb {

// Dense (channels, height, width) tensor stored channel-major.
struct StateTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    StateTensor() = default;
    StateTensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c * h * w), 0.0) {}

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] double& at(int c, int y, int x) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
    [[nodiscard]] double at(int c, int y, int x) const {
        return data[static_cast<std::size_t>((c * height + y) * width + x)];
    }

    friend bool operator==(const StateTensor&, const StateTensor&) = default;
};

}  // namespace sidb
