use crate::common::{pair, quick_cfg, small_teacher_spec, synthetic_split, tiny_spec};
use kdgan::distill::{
    self, distill_step, gan_step, DistillError, EpochView, GanPair, Objectives, ProgressiveVariant, Role, Structure, StructureFlags, TrainConfig,
};
use kdgan::eval;
use kdgan::losses::DistillWeights;
use kdgan::nn::AdamConfig;
use kdgan::ArchSpec;

type Sums = Vec<(String, String, String, String)>;

/// Generator and discriminator checksums of (teacher, student) after every epoch.
fn run_recorded(flags: &StructureFlags, teacher: GanPair<f32>, student: GanPair<f32>, cfg: &TrainConfig, obj: &Objectives) -> Sums {
    let split = synthetic_split(160, 80);
    let mut sums = Vec::new();
    let mut observer = |v: &EpochView<'_>| {
        let s = v.student.expect("distillation run has a student");
        sums.push((v.teacher.generator_checksum(), v.teacher.discriminator_checksum(), s.generator_checksum(), s.discriminator_checksum()));
        Ok(())
    };
    distill::run_structure(flags, teacher, student, &split, cfg, obj, &mut observer).unwrap();
    sums
}

fn lambda_off(s: Structure) -> StructureFlags {
    StructureFlags { lambda: false, ..s.flags() }
}

fn strong_distill() -> Objectives {
    Objectives { distill: DistillWeights { w1: 10.0, wx: 10.0, w2: 10.0 }, ..Objectives::default() }
}

pub fn frozen_teacher_is_bitwise_unchanged() {
    for s in [Structure::One, Structure::Two] {
        let teacher = pair(&small_teacher_spec(), 1);
        let before = teacher.checksum();
        let split = synthetic_split(160, 80);
        let mut per_epoch = Vec::new();
        let mut observer = |v: &EpochView<'_>| {
            per_epoch.push(v.teacher.checksum());
            Ok(())
        };
        let student = pair(&tiny_spec(), 2);
        let (teacher, _, _) = distill::run_structure(&s.flags(), teacher, student, &split, &quick_cfg(3, 0), &Objectives::default(), &mut observer).unwrap();
        assert_eq!(per_epoch.len(), 3);
        assert!(per_epoch.iter().all(|c| *c == before), "{} moved the teacher", s.name());
        assert_eq!(teacher.checksum(), before);
    }
}

pub fn distillation_loss_never_reaches_the_teacher() {
    // Teacher trajectories must not depend on K_l at all: neither on whether it is
    // active nor on its weights.
    for s in [Structure::One, Structure::Two, Structure::Three, Structure::Four] {
        let cfg = quick_cfg(2, 3);
        let run = |flags: &StructureFlags, obj: &Objectives| run_recorded(flags, pair(&small_teacher_spec(), 1), pair(&tiny_spec(), 2), &cfg, obj);
        let on = run(&s.flags(), &Objectives::default());
        let strong = run(&s.flags(), &strong_distill());
        let off = run(&lambda_off(s), &Objectives::default());
        let teacher = |sums: &Sums| sums.iter().map(|t| (t.0.clone(), t.1.clone())).collect::<Vec<_>>();
        assert_eq!(teacher(&on), teacher(&off), "{}", s.name());
        assert_eq!(teacher(&on), teacher(&strong), "{}", s.name());
        // ...while the student does see it.
        let student = |sums: &Sums| sums.iter().map(|t| t.2.clone()).collect::<Vec<_>>();
        assert_ne!(student(&on), student(&strong), "{}", s.name());
    }
}

pub fn structure_one_updates_only_the_student_generator() {
    let teacher = pair(&small_teacher_spec(), 1);
    let student = pair(&tiny_spec(), 2);
    let (t_gen, t_disc, s_gen, s_disc) =
        (teacher.generator_checksum(), teacher.discriminator_checksum(), student.generator_checksum(), student.discriminator_checksum());
    let sums = run_recorded(&Structure::One.flags(), teacher, student, &quick_cfg(2, 0), &Objectives::default());
    for (tg, td, sg, sd) in sums {
        assert_eq!((tg, td, sd), (t_gen.clone(), t_disc.clone(), s_disc.clone()));
        assert_ne!(sg, s_gen);
    }
}

pub fn structure_four_step_changes_all_four_groups() {
    let split = synthetic_split(160, 80);
    let mut teacher = pair(&small_teacher_spec(), 1);
    let mut student = pair(&tiny_spec(), 2);
    let before = [teacher.generator_checksum(), teacher.discriminator_checksum(), student.generator_checksum(), student.discriminator_checksum()];
    let x = split.train.batch(&[0, 1, 2, 3]).0;
    let rec = distill_step(&Structure::Four.flags(), &mut teacher, &mut student, &x, &Objectives::default()).unwrap();
    assert!(rec.teacher.is_some() && rec.student.k_l > 0.0);
    let after = [teacher.generator_checksum(), teacher.discriminator_checksum(), student.generator_checksum(), student.discriminator_checksum()];
    for (b, a) in before.iter().zip(&after) {
        assert_ne!(b, a);
    }
}

pub fn gan_only_flags_reduce_to_standalone_training() {
    let flags = StructureFlags { alpha: false, beta: false, mu: true, nu: true, lambda: false, teacher_frozen: true };
    let split = synthetic_split(160, 80);
    let obj = Objectives::default();

    // Step by step on identical batches.
    let mut teacher = pair(&small_teacher_spec(), 1);
    let mut student = pair(&tiny_spec(), 2);
    let mut alone = student.clone();
    for step in 0..8 {
        let idx: Vec<usize> = (0..4).map(|i| (step * 4 + i) % split.train.len()).collect();
        let x = split.train.batch(&idx).0;
        let via_flags = distill_step(&flags, &mut teacher, &mut student, &x, &obj).unwrap();
        let direct = gan_step(&mut alone, &x, &obj).unwrap();
        assert_eq!(via_flags.student, direct, "loss record at step {step}");
        assert_eq!(student.checksum(), alone.checksum(), "checksum at step {step}");
    }

    // Whole runs with the same seed and batch order.
    let cfg = quick_cfg(3, 5);
    let student = pair(&tiny_spec(), 2);
    let mut alone = student.clone();
    let sums = run_recorded(&flags, pair(&small_teacher_spec(), 1), student, &cfg, &obj);
    let mut standalone = Vec::new();
    let mut observer = |v: &EpochView<'_>| {
        standalone.push((v.teacher.generator_checksum(), v.teacher.discriminator_checksum()));
        Ok(())
    };
    distill::train_standalone(&mut alone, &split, &cfg, &obj, Role::Student, &mut observer).unwrap();
    assert_eq!(sums.iter().map(|s| (s.2.clone(), s.3.clone())).collect::<Vec<_>>(), standalone);
}

pub fn runs_are_deterministic_at_every_epoch() {
    let run = || run_recorded(&Structure::Four.flags(), pair(&small_teacher_spec(), 1), pair(&tiny_spec(), 2), &quick_cfg(2, 9), &Objectives::default());
    assert_eq!(run(), run());

    let split = synthetic_split(160, 80);
    let teach = || distill::train_teacher(&split, &tiny_spec(), &quick_cfg(2, 4), &Objectives::default()).unwrap();
    let (a, b) = (teach(), teach());
    assert_eq!(a.pair.checksum(), b.pair.checksum());
    assert_eq!(a.history.auc, b.history.auc);
    assert_ne!(a.pair.checksum(), distill::train_teacher(&split, &tiny_spec(), &quick_cfg(2, 5), &Objectives::default()).unwrap().pair.checksum());
}

/// Structure 1 distills a trained teacher. A freshly initialized teacher emits
/// near-zero targets that the student matches within a few steps, after which
/// the loss only oscillates at its floor, so the teacher gets a few epochs first.
pub fn single_batch_distillation_loss_decreases() {
    let adam = AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() };
    let split = synthetic_split(160, 80);
    let x = split.train.batch(&[0, 1, 2, 3]).0;
    for seed in 0..3 {
        let cfg = TrainConfig { eval_every: 0, ..quick_cfg(6, seed) };
        let mut teacher = distill::train_teacher(&split, &small_teacher_spec(), &cfg, &Objectives::default()).unwrap().pair;
        let init = pair(&tiny_spec(), 2 + seed);
        let mut student = GanPair::from_networks(init.gen, init.disc, adam);
        let k: Vec<f64> =
            (0..51).map(|_| distill_step(&Structure::One.flags(), &mut teacher, &mut student, &x, &Objectives::default()).unwrap().student.k_l).collect();
        let non_increasing = k.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(non_increasing >= 45, "seed {seed}: K_l non-increasing in {non_increasing} of 50 steps: {k:?}");
        assert!(k[50] < k[0]);
    }
}

pub fn empty_second_step_keeps_step_one_networks() {
    let split = synthetic_split(160, 80);
    let run = distill::run_progressive(
        ProgressiveVariant::TwoThree,
        pair(&small_teacher_spec(), 1),
        &tiny_spec(),
        &split,
        &quick_cfg(1, 0),
        &quick_cfg(0, 0),
        &Objectives::default(),
    )
    .unwrap();
    assert_eq!(run.step1.teacher.checksum(), run.step2.teacher.checksum());
    assert_eq!(run.step1.student.checksum(), run.step2.student.checksum());
    assert_eq!(run.step2.structure, "P-KDGAN-II-23");
    assert_eq!(run.full_history().steps_run, run.step1.history.steps_run);
}

pub fn history_has_one_entry_per_epoch() {
    let split = synthetic_split(160, 80);
    let run = distill::run_kdgan(Structure::Two, pair(&small_teacher_spec(), 1), &tiny_spec(), &split, &quick_cfg(3, 0), &Objectives::default()).unwrap();
    let student: Vec<usize> = run.history.auc.iter().filter(|p| p.role == Role::Student).map(|p| p.epoch).collect();
    assert_eq!(student, vec![1, 2, 3]);
    assert_eq!(run.history.epoch_losses.iter().filter(|e| e.role == Role::Student).count(), 3);
    assert_eq!(run.history.steps_run, 3 * 10);
    assert_eq!(run.structure, "KDGAN-2");
}

pub fn mismatched_latents_are_rejected() {
    let split = synthetic_split(160, 80);
    let student = ArchSpec::new(1, [2, 2, 4], 4);
    let err = distill::run_kdgan(Structure::Two, pair(&small_teacher_spec(), 1), &student, &split, &quick_cfg(1, 0), &Objectives::default()).unwrap_err();
    assert!(matches!(err, DistillError::LatentMismatch { teacher: 8, student: 4 }), "{err}");
    let frozen_but_training = StructureFlags { alpha: true, ..Structure::One.flags() };
    assert!(matches!(frozen_but_training.validate(), Err(DistillError::InconsistentFlags(_))));
}

pub fn non_finite_loss_aborts_with_recent_records() {
    let split = synthetic_split(160, 80);
    let mut obj = Objectives::default();
    obj.loss.w_enc = f64::INFINITY;
    match distill::train_teacher(&split, &tiny_spec(), &quick_cfg(1, 0), &obj) {
        Err(DistillError::Divergence { step, role, recent }) => {
            assert_eq!((step, role), (0, Role::Teacher));
            assert_eq!(recent.len(), 1);
            assert!(!recent[0].is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

pub fn untrained_generators_score_at_chance() {
    let split = synthetic_split(160, 400);
    let aucs: Vec<f64> = (0..5)
        .map(|seed| {
            let run = distill::train_teacher(&split, &tiny_spec(), &quick_cfg(0, seed), &Objectives::default()).unwrap();
            assert_eq!(run.pair.checksum(), pair(&tiny_spec(), seed).checksum());
            eval::evaluate_model(&run.pair.gen, &split).unwrap().auc
        })
        .collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((0.3..=0.7).contains(&mean), "mean untrained AUC {mean} ({aucs:?})");
}
