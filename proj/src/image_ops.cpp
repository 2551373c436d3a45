#include "dsrnet/image_ops.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dsrnet/errors.hpp"

namespace dsrnet {

namespace {

cv::Mat to_mat8(const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("image tensor must be (3,H,W)");
    const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                // BGR on disk
                px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    return m;
}

} // namespace

Tensor load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw ResourceError("cannot read image: " + path);
    Tensor img({3, m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<double>(px[2 - c]) / 255.0;
        }
    return img;
}

void save_image_png(const std::string& path, const Tensor& img) {
    if (!cv::imwrite(path, to_mat8(img))) throw ResourceError("cannot write image: " + path);
}

Tensor clamp01(const Tensor& t) {
    Tensor out = t;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
    return out;
}

namespace {
// symmetric reflection: ...2,1,0 | 0,1,2... folded into range
int64_t fold(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}
} // namespace

Tensor pad_reflect(const Tensor& t, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    if (t.rank() != 3) throw ShapeError("pad_reflect expects CHW");
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, h + top + bottom, w + left + right});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h + top + bottom; ++y) {
            const int64_t sy = fold(y - top, h);
            for (int64_t x = 0; x < w + left + right; ++x)
                out.at(ch, y, x) = t.at(ch, sy, fold(x - left, w));
        }
    return out;
}

Tensor pad_reflect_to_multiple(const Tensor& t, int64_t multiple, int64_t& out_pad_h,
                               int64_t& out_pad_w) {
    const int64_t h = t.dim(1), w = t.dim(2);
    out_pad_h = (multiple - h % multiple) % multiple;
    out_pad_w = (multiple - w % multiple) % multiple;
    if (out_pad_h == 0 && out_pad_w == 0) return t;
    return pad_reflect(t, 0, out_pad_h, 0, out_pad_w);
}

Tensor crop(const Tensor& t, int64_t top, int64_t left, int64_t h, int64_t w) {
    if (top < 0 || left < 0 || top + h > t.dim(1) || left + w > t.dim(2))
        throw ShapeError("crop outside image bounds");
    Tensor out({t.dim(0), h, w});
    for (int64_t c = 0; c < t.dim(0); ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, top + y, left + x);
    return out;
}

Tensor center_crop_max(const Tensor& t, int64_t max_h, int64_t max_w) {
    const int64_t h = std::min(max_h, t.dim(1)), w = std::min(max_w, t.dim(2));
    if (h == t.dim(1) && w == t.dim(2)) return t;
    return crop(t, (t.dim(1) - h) / 2, (t.dim(2) - w) / 2, h, w);
}

Tensor hflip(const Tensor& t) {
    Tensor out(t.shape());
    for (int64_t c = 0; c < t.dim(0); ++c)
        for (int64_t y = 0; y < t.dim(1); ++y)
            for (int64_t x = 0; x < t.dim(2); ++x)
                out.at(c, y, x) = t.at(c, y, t.dim(2) - 1 - x);
    return out;
}

Tensor gaussian_blur(const Tensor& t, double sigma) {
    if (sigma <= 0.0) throw ConfigError("gaussian_blur: sigma must be positive");
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;

    Tensor tmp(t.shape()), out(t.shape());
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] * t.at(ch, y, fold(x + i, w));
                tmp.at(ch, y, x) = acc;
            }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] * tmp.at(ch, fold(y + i, h), x);
                out.at(ch, y, x) = acc;
            }
    }
    return out;
}

Tensor resize(const Tensor& t, int64_t h, int64_t w) {
    const int64_t c = t.dim(0);
    cv::Mat src(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)), CV_64FC3);
    for (int y = 0; y < src.rows; ++y)
        for (int x = 0; x < src.cols; ++x) {
            auto& px = src.at<cv::Vec3d>(y, x);
            for (int ch = 0; ch < c && ch < 3; ++ch) px[ch] = t.at(ch, y, x);
        }
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0,
               cv::INTER_AREA);
    Tensor out({c, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < c; ++ch)
                out.at(ch, y, x) =
                    dst.at<cv::Vec3d>(static_cast<int>(y), static_cast<int>(x))[static_cast<int>(ch)];
    return out;
}

} // namespace dsrnet
