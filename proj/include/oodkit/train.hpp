#pragma once
// Two-stage training: a plain cross-entropy stage that also measures the
// confidence target, then a fine-tuning stage that interleaves an
// in-distribution batch with an auxiliary-outlier batch at every step.
// Batch order is driven by per-purpose random streams derived from one seed,
// so the in-distribution schedule of the second stage matches that of a
// continued first stage exactly.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dataset.hpp"
#include "detectors.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "mlp.hpp"
#include "oecc.hpp"
#include "rng.hpp"

namespace oodkit {

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t pretrain_epochs = 100;
    std::size_t finetune_epochs = 30;
    double lr_pretrain = 0.1;
    double lr_finetune = 0.001;
    std::size_t batch_in = 128;
    std::size_t batch_oe = 256;
    double momentum = 0.9;
    double weight_decay = 0.0;  // L2 penalty applied to weight matrices, not biases
    OeLoss oe_loss = OeLoss::tv_uniform;
    std::vector<double> lambda1_grid{0.03, 0.06, 0.09, 0.12};
    std::vector<double> lambda2_grid{0.03, 0.06, 0.09, 0.12};

    void validate() const {
        require(batch_in >= 1 && batch_oe >= 1, "train config: zero batch size");
        require(lr_pretrain >= 0.0 && lr_finetune >= 0.0, "train config: negative rate");
        require(momentum >= 0.0 && momentum < 1.0, "train config: momentum outside [0,1)");
        require(weight_decay >= 0.0, "train config: negative weight decay");
    }
};

struct EpochLogRecord {
    std::size_t epoch = 0;
    double ce_term = 0.0;
    double confidence_term = 0.0;
    double tv_term = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

using TrainLog = std::vector<EpochLogRecord>;

namespace detail {

// Random-stream identifiers; both stages derive them the same way so that
// stage two with zero-weight extra terms replays stage one bit for bit.
inline constexpr std::uint64_t kStreamInOrder = 101;
inline constexpr std::uint64_t kStreamOeOrder = 202;

inline void run_training(MlpModel& model, const Matrix& in_x, const std::vector<int>& in_y,
                         const Matrix* oe_x, std::size_t epochs, double lr0,
                         const TrainConfig& tc, const OeccConfig& oc, TrainLog* log) {
    tc.validate();
    oc.validate();
    const std::size_t n_in = in_x.rows;
    require(n_in >= 1, "train: empty in-distribution set");
    require(in_y.size() == n_in, "train: label count mismatch");
    require(model.output_dim() == oc.k, "train: model class count mismatch");

    Rng rng_in(tc.seed, kStreamInOrder);
    Rng rng_oe(tc.seed, kStreamOeOrder);

    std::vector<std::size_t> order(n_in);
    for (std::size_t i = 0; i < n_in; ++i) order[i] = i;

    std::vector<std::size_t> oe_order;
    std::size_t oe_pos = 0;
    if (oe_x != nullptr) {
        oe_order.resize(oe_x->rows);
        for (std::size_t i = 0; i < oe_order.size(); ++i) oe_order[i] = i;
        rng_oe.shuffle(oe_order);
    }

    MomentumState mom = init_momentum(model);
    const std::size_t steps = (n_in + tc.batch_in - 1) / tc.batch_in;
    std::vector<std::size_t> oe_idx(tc.batch_oe);
    std::vector<int> batch_y;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double lr = cosine_lr(epoch, epochs, lr0);
        rng_in.shuffle(order);
        LossBreakdown epoch_loss;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t begin = step * tc.batch_in;
            const std::size_t end = std::min(n_in, begin + tc.batch_in);
            const std::vector<std::size_t> batch_rows(order.begin() + begin,
                                                      order.begin() + end);
            Matrix x_in = gather_rows(in_x, batch_rows);
            batch_y.resize(batch_rows.size());
            for (std::size_t i = 0; i < batch_rows.size(); ++i)
                batch_y[i] = in_y[batch_rows[i]];

            Matrix batch = x_in;
            std::size_t n_batch_in = x_in.rows;
            if (oe_x != nullptr) {
                for (std::size_t i = 0; i < tc.batch_oe; ++i) {
                    if (oe_pos == oe_order.size()) {
                        rng_oe.shuffle(oe_order);
                        oe_pos = 0;
                    }
                    oe_idx[i] = oe_order[oe_pos++];
                }
                batch = vstack(x_in, gather_rows(*oe_x, oe_idx));
            }

            const ForwardTrace trace = forward(model, batch);
            const Matrix logits_in = take_rows(trace.logits(), 0, n_batch_in);
            const Matrix logits_oe =
                oe_x != nullptr ? take_rows(trace.logits(), n_batch_in, batch.rows)
                                : Matrix();
            OeccTerms terms = oecc_terms(logits_in, batch_y, logits_oe, oc);

            const Matrix dlogits = oe_x != nullptr ? vstack(terms.grad_in, terms.grad_oe)
                                                   : terms.grad_in;
            ModelGrads grads = backward(model, trace, dlogits);
            if (tc.weight_decay > 0.0) {
                for (std::size_t l = 0; l < model.depth(); ++l)
                    for (std::size_t i = 0; i < grads.weights[l].data.size(); ++i)
                        grads.weights[l].data[i] +=
                            tc.weight_decay * model.weights[l].data[i];
            }
            sgd_momentum_step(model, grads, lr, mom, tc.momentum);

            epoch_loss.ce_term += terms.loss.ce_term;
            epoch_loss.confidence_term += terms.loss.confidence_term;
            epoch_loss.tv_term += terms.loss.tv_term;
            epoch_loss.total += terms.loss.total;
        }
        if (log != nullptr) {
            const double inv_steps = 1.0 / static_cast<double>(steps);
            log->push_back({epoch, epoch_loss.ce_term * inv_steps,
                            epoch_loss.confidence_term * inv_steps,
                            epoch_loss.tv_term * inv_steps, epoch_loss.total * inv_steps,
                            lr});
        }
    }
}

}  // namespace detail

// Stage one: cross-entropy training. Returns the training accuracy of the
// final parameters, which stage two uses as its frozen confidence target.
// Zero epochs leaves the model untouched and reports the accuracy as-is.
inline double pretrain(MlpModel& model, const Dataset& in_train, const TrainConfig& cfg,
                       TrainLog* log = nullptr) {
    validate_dataset(in_train);
    require(in_train.role == DatasetRole::in_train, "pretrain: wrong dataset role");
    OeccConfig oc;
    oc.lambda1 = 0.0;
    oc.lambda2 = 0.0;
    oc.a_tr = 1.0;
    oc.k = model.output_dim();
    detail::run_training(model, in_train.features, in_train.labels, nullptr,
                         cfg.pretrain_epochs, cfg.lr_pretrain, cfg, oc, log);
    return estimate_a_tr(model, in_train.features, in_train.labels);
}

// Stage two: fine-tune with the combined objective against an auxiliary
// outlier set. The outlier set is consumed in shuffled cycles, reshuffling
// whenever it runs out mid-stream.
inline void finetune_oecc(MlpModel& model, const Dataset& in_train, const Dataset& out_oe,
                          const TrainConfig& cfg, const OeccConfig& oecc_cfg,
                          TrainLog* log = nullptr) {
    validate_dataset(in_train);
    validate_dataset(out_oe);
    require(in_train.role == DatasetRole::in_train, "finetune: wrong training role");
    require(out_oe.role == DatasetRole::out_oe, "finetune: wrong auxiliary role");
    require(out_oe.features.rows >= 1, "finetune: empty auxiliary set");
    require(out_oe.features.cols == model.input_dim(),
            "finetune: auxiliary dimensionality mismatch");
    detail::run_training(model, in_train.features, in_train.labels, &out_oe.features,
                         cfg.finetune_epochs, cfg.lr_finetune, cfg, oecc_cfg, log);
}

// ---- weight grid search -----------------------------------------------------

struct GridCell {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double val_fpr95 = 0.0;
    double val_auroc = 0.0;
};

struct TuneReport {
    std::vector<GridCell> cells;
    double best_lambda1 = 0.0;
    double best_lambda2 = 0.0;
    double a_tr = 0.0;
};

using ModelFactory = std::function<MlpModel(std::uint64_t seed)>;

// Pretrain once, then fine-tune one copy per (lambda1, lambda2) grid cell and
// score each by max-softmax separation of held-out in-distribution data from
// the validation outlier set. Selection is lexicographic: lowest validation
// FPR at 95% recall, then highest AUROC, then the smaller lambda2, then the
// smaller lambda1.
inline TuneReport tune_lambdas(const ModelFactory& factory, const Dataset& in_train,
                               const Dataset& in_test, const Dataset& out_oe,
                               const Dataset& out_val, const TrainConfig& cfg) {
    require(!cfg.lambda1_grid.empty() && !cfg.lambda2_grid.empty(),
            "tune: empty lambda grid");
    for (double l : cfg.lambda1_grid) require(l >= 0.0, "tune: negative lambda1");
    for (double l : cfg.lambda2_grid) require(l >= 0.0, "tune: negative lambda2");
    validate_dataset(in_test);
    validate_dataset(out_val);
    require(in_test.role == DatasetRole::in_test, "tune: wrong held-out role");
    require(out_val.role == DatasetRole::out_val, "tune: wrong validation role");
    require(out_val.family != out_oe.family || out_val.family.empty(),
            "tune: validation outliers must differ from the auxiliary family");

    MlpModel base = factory(cfg.seed);
    TuneReport report;
    report.a_tr = pretrain(base, in_train, cfg, nullptr);

    OeccConfig oc;
    oc.k = base.output_dim();
    oc.a_tr = report.a_tr;
    oc.oe_loss = cfg.oe_loss;

    std::size_t cell_index = 0;
    for (double l1 : cfg.lambda1_grid) {
        for (double l2 : cfg.lambda2_grid) {
            MlpModel m = base;
            TrainConfig cell_cfg = cfg;
            cell_cfg.seed = derive_seed(cfg.seed, 4000 + cell_index);
            OeccConfig cell_oc = oc;
            cell_oc.lambda1 = l1;
            cell_oc.lambda2 = l2;
            finetune_oecc(m, in_train, out_oe, cell_cfg, cell_oc, nullptr);

            const std::vector<double> s_in = msp_scores(m, in_test.features);
            const std::vector<double> s_out = msp_scores(m, out_val.features);
            const std::vector<ScoredSample> samples = make_scored(s_in, s_out);
            GridCell cell;
            cell.lambda1 = l1;
            cell.lambda2 = l2;
            cell.val_fpr95 = fpr_at_95_tpr(samples);
            cell.val_auroc = auroc(samples, Origin::in_dist);
            report.cells.push_back(cell);
            ++cell_index;
        }
    }

    const GridCell* best = &report.cells.front();
    for (const GridCell& c : report.cells) {
        if (c.val_fpr95 < best->val_fpr95 ||
            (c.val_fpr95 == best->val_fpr95 &&
             (c.val_auroc > best->val_auroc ||
              (c.val_auroc == best->val_auroc &&
               (c.lambda2 < best->lambda2 ||
                (c.lambda2 == best->lambda2 && c.lambda1 < best->lambda1)))))) {
            best = &c;
        }
    }
    report.best_lambda1 = best->lambda1;
    report.best_lambda2 = best->lambda2;
    return report;
}

}  // namespace oodkit
