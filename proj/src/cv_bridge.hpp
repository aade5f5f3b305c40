#pragma once

#include <opencv2/core.hpp>

#include "ssm/imaging.hpp"

namespace ssm::detail {

inline cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_32FC(img.channels()));
  std::copy(img.data().begin(), img.data().end(), m.ptr<float>());
  return m;
}

inline Image from_mat(const cv::Mat& m) {
  cv::Mat f = m.isContinuous() ? m : m.clone();
  const float* p = f.ptr<float>();
  return Image(f.rows, f.cols, f.channels(), std::vector<float>(p, p + f.total() * f.channels()));
}

}  // namespace ssm::detail
