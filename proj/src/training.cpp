#include "pyrdiff/training.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "pyrdiff/imageops.hpp"
#include "pyrdiff/png_io.hpp"
#include "pyrdiff/pydt.hpp"
#include "pyrdiff/threading.hpp"

namespace pyrdiff {

namespace {
// RNG derivation tags: one namespace per consumer so streams never collide.
constexpr uint64_t kTagStepT = 0x01;
constexpr uint64_t kTagPair = 0x02;
constexpr uint64_t kTagNoise = 0x03;
constexpr uint64_t kTagSwap = 0x04;
constexpr uint64_t kTagScene = 0x05;

std::vector<std::pair<int, int>> chunk_ranges(int n, int workers) {
    std::vector<std::pair<int, int>> out;
    int base = n / workers, rem = n % workers, begin = 0;
    for (int w = 0; w < workers; ++w) {
        int len = base + (w < rem ? 1 : 0);
        if (len > 0) out.emplace_back(begin, begin + len);
        begin += len;
    }
    return out;
}
}  // namespace

double lr_schedule(const TrainConfig& cfg, int iteration) {
    double lr = cfg.learning_rate;
    for (int m : cfg.milestones)
        if (iteration >= m) lr *= 0.5;
    return lr;
}

std::pair<ImageTensor, ImageTensor> generate_pair(const PairSampler& g, uint64_t seed) {
    Rng r = Rng::derive(seed, {kTagScene});
    const int H = g.height, W = g.width;
    Tensor<double> y01(3, H, W);
    for (int c = 0; c < 3; ++c) {
        double c0 = r.uniform(0.2, 0.8);
        double gx = r.uniform(-0.4, 0.4);
        double gy = r.uniform(-0.4, 0.4);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                y01.at(c, i, j) = c0 + gx * (static_cast<double>(j) / W) +
                                  gy * (static_cast<double>(i) / H);
    }
    const int nshapes = static_cast<int>(r.uniform_int(g.min_shapes, g.max_shapes));
    for (int sidx = 0; sidx < nshapes; ++sidx) {
        bool rect = r.uniform() < 0.5;
        double col[3] = {r.uniform(), r.uniform(), r.uniform()};
        if (rect) {
            int y0 = static_cast<int>(r.uniform_int(0, std::max(0, H - 4)));
            int x0 = static_cast<int>(r.uniform_int(0, std::max(0, W - 4)));
            int y1 = static_cast<int>(r.uniform_int(y0 + 3, std::min(H, y0 + 20)));
            int x1 = static_cast<int>(r.uniform_int(x0 + 3, std::min(W, x0 + 28)));
            for (int c = 0; c < 3; ++c)
                for (int i = y0; i < y1; ++i)
                    for (int j = x0; j < x1; ++j) y01.at(c, i, j) = col[c];
        } else {
            double cy = r.uniform(4.0, std::max(4.0, H - 4.0));
            double cx = r.uniform(4.0, std::max(4.0, W - 4.0));
            double ry = r.uniform(3.0, 10.0);
            double rx = r.uniform(3.0, 14.0);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double dy = (i - cy) / ry, dx = (j - cx) / rx;
                    if (dy * dy + dx * dx <= 1.0)
                        for (int c = 0; c < 3; ++c) y01.at(c, i, j) = col[c];
                }
        }
    }
    const double k = r.uniform(g.illumination_min, g.illumination_max);
    const double sigma = r.uniform(g.noise_min, g.noise_max);

    ImageTensor y(3, H, W), x_low(3, H, W);
    for (size_t i = 0; i < y01.data.size(); ++i) {
        double yv = std::min(1.0, std::max(0.0, y01.data[i]));
        double xv = yv * k + sigma * r.gaussian();
        xv = std::min(1.0, std::max(0.0, xv));
        y.data[i] = static_cast<float>(2.0 * yv - 1.0);
        x_low.data[i] = static_cast<float>(2.0 * xv - 1.0);
    }
    return {std::move(x_low), std::move(y)};
}

FolderPairSource::FolderPairSource(const std::string& dir, int patch_h, int patch_w)
    : patch_h_(patch_h), patch_w_(patch_w) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("training data directory not found: " + dir);
    std::vector<std::string> lows;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 8 && name.substr(name.size() - 8) == "_low.png")
            lows.push_back(e.path().string());
    }
    std::sort(lows.begin(), lows.end());
    for (const auto& low : lows) {
        std::string normal = low.substr(0, low.size() - 8) + "_normal.png";
        if (!fs::exists(normal)) throw IoError("missing normal-light pair for " + low);
        pairs_.emplace_back(load_png(low), load_png(normal));
        const auto& [xl, y] = pairs_.back();
        if (xl.height < patch_h_ || xl.width < patch_w_)
            throw IoError("training image smaller than patch: " + low);
        if (xl.height != y.height || xl.width != y.width)
            throw IoError("pair resolution mismatch: " + low);
    }
    if (pairs_.empty()) throw IoError("no *_low.png / *_normal.png pairs in " + dir);
}

std::pair<ImageTensor, ImageTensor> FolderPairSource::sample_pair(uint64_t seed) {
    Rng r(seed);
    const auto& [xl, y] = pairs_[static_cast<size_t>(r.uniform_int(0, pairs_.size() - 1))];
    if (xl.height == patch_h_ && xl.width == patch_w_) return {xl, y};
    int oy = static_cast<int>(r.uniform_int(0, xl.height - patch_h_));
    int ox = static_cast<int>(r.uniform_int(0, xl.width - patch_w_));
    ImageTensor cl(3, patch_h_, patch_w_), cy(3, patch_h_, patch_w_);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < patch_h_; ++i)
            for (int j = 0; j < patch_w_; ++j) {
                cl.at(c, i, j) = xl.at(c, oy + i, ox + j);
                cy.at(c, i, j) = y.at(c, oy + i, ox + j);
            }
    return {std::move(cl), std::move(cy)};
}

struct Trainer::Workers {
    std::vector<std::unique_ptr<ConvDenoiser<float>>> denoisers;
    std::vector<std::unique_ptr<GlobalCorrector<float>>> correctors;
};

Trainer::Trainer(TrainConfig cfg, NoiseSchedule ns, PyramidSchedule ps, double gamma,
                 std::shared_ptr<TrainDataSource> data)
    : cfg_(cfg), ns_(std::move(ns)), ps_(std::move(ps)), gamma_(gamma), data_(std::move(data)) {
    if (cfg_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    for (size_t i = 1; i < cfg_.milestones.size(); ++i)
        if (cfg_.milestones[i] < cfg_.milestones[i - 1])
            throw std::invalid_argument("milestones must be sorted");
    if (ps_.base_height != cfg_.patch_height || ps_.base_width != cfg_.patch_width)
        throw std::invalid_argument("pyramid schedule resolution must match the patch size");
    denoiser_ = std::make_unique<ConvDenoiser<float>>(cfg_.seed);
    corrector_ = std::make_unique<GlobalCorrector<float>>(cfg_.seed + 1);
    opt_denoiser_ = std::make_unique<nn::Adam<float>>(denoiser_->params(), cfg_.adam_beta1,
                                                      cfg_.adam_beta2, cfg_.adam_eps);
    opt_corrector_ = std::make_unique<nn::Adam<float>>(corrector_->params(), cfg_.adam_beta1,
                                                       cfg_.adam_beta2, cfg_.adam_eps);
    workers_ = std::make_unique<Workers>();
}

Trainer::~Trainer() = default;

StepReport Trainer::step() {
    const int it = iteration_;
    const int T = ns_.T;
    const int t = static_cast<int>(Rng::derive(cfg_.seed, {kTagStepT, static_cast<uint64_t>(it)})
                                       .uniform_int(1, T));
    const int s = ps_.factor_at(t);
    const int lh = cfg_.patch_height / s, lw = cfg_.patch_width / s;
    const double ab = ns_.alpha_bar_at(t);
    const double sqrt_ab = std::sqrt(ab), sqrt_1mab = std::sqrt(1.0 - ab);
    const int batch = cfg_.batch_size;
    const bool gate = cfg_.use_corrector &&
                      amplification_factor(ns_, t) > gamma_;
    const double lr = lr_schedule(cfg_, it);

    const ImageTensor pos = position_encoding<float>(cfg_.patch_height, cfg_.patch_width, s);
    const auto time_emb_vals = time_embedding(t, T);

    // Per-sample batch assembly, independent of worker layout.
    nn::Activations<float> net_in(batch, ConvDenoiser<float>::kInputChannels, lh, lw);
    nn::Activations<float> eps_all(batch, 3, lh, lw);
    nn::Activations<float> y_level(batch, 3, lh, lw);
    nn::Activations<float> cond10(batch, 10, lh, lw);
    const size_t hw = static_cast<size_t>(lh) * lw;
    for (int i = 0; i < batch; ++i) {
        auto [x_low, y] = data_->sample_pair(
            Rng::derive(cfg_.seed, {kTagPair, static_cast<uint64_t>(it), static_cast<uint64_t>(i)})
                .next_u64());
        ImageTensor he = histogram_equalize(x_low);
        ImageTensor x_low_s = downsample(x_low, s);
        ImageTensor he_s = downsample(he, s);
        ImageTensor y_s = downsample(y, s);

        Rng nrng = Rng::derive(cfg_.seed,
                               {kTagNoise, static_cast<uint64_t>(it), static_cast<uint64_t>(i)});
        ImageTensor eps = gaussian_tensor<float>(3, lh, lw, nrng);
        bool swap = Rng::derive(cfg_.seed, {kTagSwap, static_cast<uint64_t>(it),
                                            static_cast<uint64_t>(i)})
                        .uniform() < 0.5;

        float* dst = net_in.sample(i);
        for (size_t k = 0; k < 3 * hw; ++k)
            dst[k] = static_cast<float>(sqrt_ab * y_s.data[k] + sqrt_1mab * eps.data[k]);
        const ImageTensor& first = swap ? he_s : x_low_s;
        const ImageTensor& second = swap ? x_low_s : he_s;
        std::copy(first.data.begin(), first.data.end(), dst + 3 * hw);
        std::copy(second.data.begin(), second.data.end(), dst + 6 * hw);
        std::copy(pos.data.begin(), pos.data.end(), dst + 9 * hw);
        for (int ch = 0; ch < 8; ++ch)
            std::fill(dst + (13 + ch) * hw, dst + (14 + ch) * hw,
                      static_cast<float>(time_emb_vals[ch]));

        std::copy(eps.data.begin(), eps.data.end(), eps_all.sample(i));
        std::copy(y_s.data.begin(), y_s.data.end(), y_level.sample(i));
        float* cd = cond10.sample(i);
        std::copy(x_low_s.data.begin(), x_low_s.data.end(), cd);
        std::copy(he_s.data.begin(), he_s.data.end(), cd + 3 * hw);
        std::copy(pos.data.begin(), pos.data.end(), cd + 6 * hw);
    }

    const int workers = std::min(thread_count(), batch);
    auto ranges = chunk_ranges(batch, workers);
    const int nchunks = static_cast<int>(ranges.size());
    while (static_cast<int>(workers_->denoisers.size()) < nchunks - 1) {
        workers_->denoisers.push_back(std::make_unique<ConvDenoiser<float>>(0));
        workers_->correctors.push_back(std::make_unique<GlobalCorrector<float>>(0));
    }

    const double inv_n = 1.0 / (static_cast<double>(batch) * 3.0 * hw);
    std::vector<double> dloss_part(nchunks, 0.0), closs_part(nchunks, 0.0);

    auto run_chunk = [&](int ci, ConvDenoiser<float>& dn, GlobalCorrector<float>& gc) {
        auto [b0, b1] = ranges[ci];
        const int cn = b1 - b0;
        nn::Activations<float> xin(cn, net_in.c, lh, lw);
        std::copy(net_in.sample(b0), net_in.sample(b0) + cn * net_in.sample_size(), xin.data.begin());

        nn::Activations<float> pred = dn.forward(xin, true);
        nn::Activations<float> dout(cn, 3, lh, lw);
        double dl = 0.0;
        for (size_t k = 0; k < pred.data.size(); ++k) {
            double r = static_cast<double>(pred.data[k]) - eps_all.data[b0 * 3 * hw + k];
            dl += std::abs(r);
            dout.data[k] = static_cast<float>(r > 0.0 ? inv_n : (r < 0.0 ? -inv_n : 0.0));
        }
        dloss_part[ci] = dl;
        dn.backward(dout);

        if (gate) {
            // y_theta from the detached prediction values.
            nn::Activations<float> y3(cn, 3, lh, lw);
            const size_t off = static_cast<size_t>(b0) * 3 * hw;
            for (size_t k = 0; k < y3.data.size(); ++k) {
                double xt = net_in.data[static_cast<size_t>(b0) * net_in.sample_size() +
                                        (k / (3 * hw)) * net_in.sample_size() + (k % (3 * hw))];
                y3.data[k] = static_cast<float>((xt - sqrt_1mab * pred.data[k]) / sqrt_ab);
            }
            nn::Activations<float> c10(cn, 10, lh, lw);
            std::copy(cond10.sample(b0), cond10.sample(b0) + cn * cond10.sample_size(),
                      c10.data.begin());
            nn::Activations<float> yc = gc.forward(y3, c10, true);
            nn::Activations<float> cout(cn, 3, lh, lw);
            double cl = 0.0;
            for (size_t k = 0; k < yc.data.size(); ++k) {
                double r = static_cast<double>(yc.data[k]) - y_level.data[off + k];
                cl += std::abs(r);
                cout.data[k] = static_cast<float>(r > 0.0 ? inv_n : (r < 0.0 ? -inv_n : 0.0));
            }
            closs_part[ci] = cl;
            gc.backward(cout);
        }
    };

    denoiser_->zero_grads();
    corrector_->zero_grads();
    if (nchunks == 1) {
        run_chunk(0, *denoiser_, *corrector_);
    } else {
        for (int w = 0; w < nchunks - 1; ++w) {
            workers_->denoisers[w]->copy_params_from(*denoiser_);
            workers_->denoisers[w]->zero_grads();
            workers_->correctors[w]->copy_params_from(*corrector_);
            workers_->correctors[w]->zero_grads();
        }
        parallel_for(nchunks, [&](int ci) {
            if (ci == 0)
                run_chunk(0, *denoiser_, *corrector_);
            else
                run_chunk(ci, *workers_->denoisers[ci - 1], *workers_->correctors[ci - 1]);
        });
        // Deterministic reduction in chunk order.
        auto dmaster = denoiser_->params();
        auto cmaster = corrector_->params();
        for (int w = 0; w < nchunks - 1; ++w) {
            auto dw = workers_->denoisers[w]->params();
            for (size_t p = 0; p < dmaster.size(); ++p)
                for (size_t k = 0; k < dmaster[p]->grad.size(); ++k)
                    dmaster[p]->grad[k] += dw[p]->grad[k];
            if (gate) {
                auto cw = workers_->correctors[w]->params();
                for (size_t p = 0; p < cmaster.size(); ++p)
                    for (size_t k = 0; k < cmaster[p]->grad.size(); ++k)
                        cmaster[p]->grad[k] += cw[p]->grad[k];
            }
        }
    }

    StepReport rep;
    rep.iteration = it;
    rep.t = t;
    rep.lr = lr;
    double dloss = 0.0, closs = 0.0;
    for (int ci = 0; ci < nchunks; ++ci) {
        dloss += dloss_part[ci];
        closs += closs_part[ci];
    }
    rep.denoiser_loss = dloss * inv_n;
    if (!std::isfinite(rep.denoiser_loss))
        throw std::runtime_error("training diverged: non-finite denoiser loss at iteration " +
                                 std::to_string(it) + " (t=" + std::to_string(t) + ")");

    opt_denoiser_->step(lr);
    if (gate) {
        rep.corrector_loss = closs * inv_n;
        rep.corrector_updated = true;
        if (!std::isfinite(rep.corrector_loss))
            throw std::runtime_error("training diverged: non-finite corrector loss at iteration " +
                                     std::to_string(it));
        opt_corrector_->step(lr);
        ++gated_steps_;
    }
    ++iteration_;
    return rep;
}

void Trainer::write_csv_header(std::ostream& csv) {
    csv << "iteration,denoiser_loss,corrector_loss,lr,gate_rate\n";
}

void Trainer::run(std::ostream* csv, const std::string& checkpoint_dir) {
    while (iteration_ < cfg_.iterations) {
        StepReport rep = step();
        if (csv) {
            (*csv) << rep.iteration << ',' << rep.denoiser_loss << ',';
            if (rep.corrector_updated) (*csv) << rep.corrector_loss;
            (*csv) << ',' << rep.lr << ','
                   << static_cast<double>(gated_steps_) / iteration_ << '\n';
        }
        if (!checkpoint_dir.empty() && cfg_.checkpoint_every > 0 &&
            (iteration_ % cfg_.checkpoint_every == 0 || iteration_ == cfg_.iterations)) {
            save_checkpoint(checkpoint_dir + "/checkpoint_" + std::to_string(iteration_) +
                            ".pydt");
            save_checkpoint(checkpoint_dir + "/latest.pydt");
        }
    }
}

void Trainer::save_checkpoint(const std::string& path) const {
    PydtContainer c;
    nlohmann::json meta;
    meta["iteration"] = iteration_;
    meta["gated_steps"] = gated_steps_;
    meta["adam_denoiser_steps"] = opt_denoiser_->steps_taken();
    meta["adam_corrector_steps"] = opt_corrector_->steps_taken();
    meta["T"] = ns_.T;
    meta["batch_size"] = cfg_.batch_size;
    c.meta_json = meta.dump();

    denoiser_->save(c, "");
    corrector_->save(c, "");
    auto pack = [&c](const std::string& prefix, nn::Adam<float>& opt,
                     std::vector<nn::Param<float>*> params) {
        for (size_t i = 0; i < params.size(); ++i) {
            for (auto [tag, vec] : {std::pair<const char*, std::vector<float>*>{"m", &opt.m()[i]},
                                    {"v", &opt.v()[i]}}) {
                PydtEntry e;
                e.name = prefix + tag + "/" + params[i]->name;
                e.tensor = Tensor<float>(1, 1, static_cast<int>(vec->size()));
                std::copy(vec->begin(), vec->end(), e.tensor.data.begin());
                c.entries.push_back(std::move(e));
            }
        }
    };
    pack("optim/denoiser/", *opt_denoiser_, denoiser_->params());
    pack("optim/corrector/", *opt_corrector_, corrector_->params());
    save_pydt_container(path, c);
}

void Trainer::load_checkpoint(const std::string& path) {
    PydtContainer c = load_pydt_container(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(c.meta_json);
        iteration_ = meta.at("iteration").get<int>();
        gated_steps_ = meta.value("gated_steps", 0);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    denoiser_->load(c, "");
    corrector_->load(c, "");
    auto unpack = [&c, &path](const std::string& prefix, nn::Adam<float>& opt,
                              std::vector<nn::Param<float>*> params, int64_t steps) {
        for (size_t i = 0; i < params.size(); ++i) {
            for (auto [tag, vec] : {std::pair<const char*, std::vector<float>*>{"m", &opt.m()[i]},
                                    {"v", &opt.v()[i]}}) {
                const Tensor<float>* t = c.find(prefix + tag + "/" + params[i]->name);
                if (!t || t->data.size() != vec->size())
                    throw IoError("corrupt checkpoint (optimizer state): " + path);
                std::copy(t->data.begin(), t->data.end(), vec->begin());
            }
        }
        opt.set_steps(steps);
    };
    unpack("optim/denoiser/", *opt_denoiser_, denoiser_->params(),
           meta.value("adam_denoiser_steps", static_cast<int64_t>(iteration_)));
    unpack("optim/corrector/", *opt_corrector_, corrector_->params(),
           meta.value("adam_corrector_steps", static_cast<int64_t>(gated_steps_)));
}

}  // namespace pyrdiff
