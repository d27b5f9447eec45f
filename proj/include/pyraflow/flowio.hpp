#pragma once

#include <string>

#include "pyraflow/tensor.hpp"

namespace pyraflow {

// Middlebury .flo: "PIEH" sentinel float, i32 width, i32 height, then
// row-major interleaved (u, v) float pairs, all little endian.
void write_flo(const std::string& path, const FlowField& flow);
FlowField read_flo(const std::string& path);

// Binary PPM (P6) / PGM (P5), maxval 255. Float images live in [0, 1];
// values outside are clamped on write.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

// Raw byte variant used for segment id maps.
void write_pgm_u8(const std::string& path, const std::vector<unsigned char>& data,
                  int height, int width);
std::vector<unsigned char> read_pgm_u8(const std::string& path, int& height, int& width);

// Middlebury-style color coding. max_norm <= 0 selects the 99th percentile
// of the flow magnitudes; the result is a 3-channel image in [0, 1].
Tensor flow_to_color(const FlowField& flow, float max_norm = 0.0f);

}  // namespace pyraflow
