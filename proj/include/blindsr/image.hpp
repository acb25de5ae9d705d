#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <opencv2/core.hpp>

namespace blindsr {

// Images travel as float32 tensors shaped (C, H, W) with values in [0, 1],
// RGB channel order. Batches are (N, C, H, W).
using ImageTensor = torch::Tensor;

// Throws std::runtime_error if the file cannot be decoded.
ImageTensor load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const ImageTensor& img);

// Float HWC mat (CV_32FC{C}, same channel order as the tensor).
cv::Mat to_float_mat(const ImageTensor& img);
ImageTensor from_float_mat(const cv::Mat& mat);

// 8-bit BGR(A)/gray mat for codecs. Values are rounded and saturated.
cv::Mat to_bgr8(const ImageTensor& img);
ImageTensor from_bgr8(const cv::Mat& mat);

bool is_image_file(const std::filesystem::path& path);
// Regular image files in `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace blindsr
