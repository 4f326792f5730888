#pragma once

#include <cstdint>
#include <string>

#include "wetsam/errors.hpp"

namespace wetsam {

/// Architecture hyperparameters. Feature width D is the encoder output; the fused
/// temporal summary (and every decoder token) is gru_hidden + heads * D / heads wide.
struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t num_classes = 4;       // K + 1, class 0 included
    std::size_t shallow_width = 16;
    std::size_t feature_dim = 32;      // D
    std::size_t encoder_stride = 4;
    std::size_t reduction = 4;         // adapter bottleneck ratio r
    std::size_t smoothing_kernel = 5;
    std::size_t gru_hidden = 32;       // D_g
    std::size_t heads = 4;
    std::size_t latents = 8;           // M
    std::size_t decoder_blocks = 2;
    std::size_t mlp_hidden = 128;
    std::uint64_t init_seed = 7;
    std::uint64_t encoder_seed = 1234;

    std::size_t fused_dim() const { return gru_hidden + feature_dim; }

    void validate() const {
        if (in_channels == 0) throw ConfigError("model: in_channels must be positive");
        if (num_classes < 2 || num_classes > 254) throw ConfigError("model: num_classes must be in [2, 254]");
        if (feature_dim == 0 || feature_dim % 2 != 0) throw ConfigError("model: feature_dim must be positive and even");
        if (heads == 0 || feature_dim % heads != 0) {
            throw ConfigError("model: feature_dim " + std::to_string(feature_dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        if (reduction == 0 || shallow_width % reduction != 0 || feature_dim % reduction != 0) {
            throw ConfigError("model: adapter widths must be divisible by the reduction ratio");
        }
        if (encoder_stride != 4) throw ConfigError("model: the stand-in encoder has a fixed stride of 4");
        if (smoothing_kernel == 0 || smoothing_kernel % 2 == 0) throw ConfigError("model: smoothing kernel must be odd");
        if (gru_hidden == 0 || latents == 0 || decoder_blocks == 0 || mlp_hidden == 0) {
            throw ConfigError("model: gru_hidden, latents, decoder_blocks and mlp_hidden must be positive");
        }
        if (fused_dim() % 4 != 0) throw ConfigError("model: fused width must be divisible by 4");
    }
};

} // namespace wetsam
