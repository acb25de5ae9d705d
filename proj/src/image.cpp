#include "blindsr/image.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace blindsr {

namespace fs = std::filesystem;

cv::Mat to_float_mat(const ImageTensor& img) {
  TORCH_CHECK(img.dim() == 3, "expected a (C, H, W) image, got ", img.sizes());
  const auto c = static_cast<int>(img.size(0));
  const auto h = static_cast<int>(img.size(1));
  const auto w = static_cast<int>(img.size(2));
  auto hwc = img.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  cv::Mat wrapped(h, w, CV_32FC(c), hwc.data_ptr<float>());
  return wrapped.clone();
}

ImageTensor from_float_mat(const cv::Mat& mat) {
  cv::Mat src = mat;
  if (src.depth() != CV_32F) src.convertTo(src, CV_32F);
  if (!src.isContinuous()) src = src.clone();
  auto t = torch::from_blob(src.data, {src.rows, src.cols, src.channels()}, torch::kFloat32);
  return t.permute({2, 0, 1}).contiguous().clone();
}

cv::Mat to_bgr8(const ImageTensor& img) {
  cv::Mat f = to_float_mat(img);
  cv::Mat u8;
  f.convertTo(u8, CV_8U, 255.0);
  if (u8.channels() == 3) {
    cv::cvtColor(u8, u8, cv::COLOR_RGB2BGR);
  } else if (u8.channels() == 4) {
    cv::cvtColor(u8, u8, cv::COLOR_RGBA2BGRA);
  }
  return u8;
}

ImageTensor from_bgr8(const cv::Mat& mat) {
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1: rgb = mat; break;
    case 3: cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw std::runtime_error("unsupported channel count " + std::to_string(mat.channels()));
  }
  cv::Mat f;
  const double scale = mat.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  rgb.convertTo(f, CV_32F, scale);
  return from_float_mat(f);
}

ImageTensor load_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read image: " + path.string());
  return from_bgr8(m);
}

void save_png(const fs::path& path, const ImageTensor& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto clipped = img.detach().clamp(0.0, 1.0);
  if (!cv::imwrite(path.string(), to_bgr8(clipped))) {
    throw std::runtime_error("cannot write image: " + path.string());
  }
}

bool is_image_file(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace blindsr
