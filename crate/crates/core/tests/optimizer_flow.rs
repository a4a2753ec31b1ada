use std::sync::{Arc, Mutex};

use promptforge::agents::{
    AgentError, AgentRole, AgentSettings, ChatAgent, Instruction, ScriptedTransport, SimTransport,
    TransportError,
};
use promptforge::optimizer::{
    evaluate_instruction, run_iteration, run_optimization, OptimizerError, RunConfig, RunState,
    Services,
};
use promptforge::pools::{NoProfessionalSource, PoolError, ProfessionalSource};
use promptforge::retry::RetryPolicy;
use promptforge::runlog::RecordBody;
use promptforge::scoring::{sim_score, SimScorer};
use promptforge::selector::{ArmId, ArmStats};
use promptforge::ExitStatus;

fn services_with(
    transport: ScriptedTransport,
    professional: Arc<dyn ProfessionalSource>,
) -> Services {
    Services {
        agent: ChatAgent::new(
            Arc::new(transport),
            AgentSettings::default(),
            RetryPolicy::immediate(5),
        ),
        scorer: Arc::new(SimScorer { seed: 3 }),
        images: None,
        professional,
    }
}

fn queries(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Generator reply derived from the query named in the rendered prompt.
fn echo_generator(
    role: AgentRole,
    request: &promptforge::agents::ChatRequest,
) -> Result<String, TransportError> {
    assert_eq!(role, AgentRole::Generator);
    let query = request
        .user_content()
        .rsplit(':')
        .next()
        .unwrap_or("")
        .trim()
        .to_string();
    Ok(format!("a vibrant {query} at golden hour"))
}

#[test]
fn evaluate_instruction_scores_batch_and_records_one_pull() {
    let services = services_with(
        ScriptedTransport::from_fn(echo_generator),
        Arc::new(NoProfessionalSource),
    );
    let instr = Instruction::initial(ArmId(0), "Refine :{query}").unwrap();
    let batch = queries(&["cactus", "luxury yacht", "flaming phoenix"]);
    let mut arm = ArmStats::new(ArmId(0), 0);
    let eval = evaluate_instruction(&instr, &batch, &services, 0, 4, &mut arm).unwrap();

    let expected: Vec<f64> = batch
        .iter()
        .map(|q| {
            sim_score(q, &format!("a vibrant {q} at golden hour"), 3)
                .unwrap()
                .value()
        })
        .collect();
    let mean = expected.iter().sum::<f64>() / 3.0;
    assert!((eval.mean.value() - mean).abs() < 1e-12);
    assert_eq!(arm.pulls, 1);
    assert_eq!(arm.mean_reward, Some(eval.mean.value()));
    let order: Vec<&str> = eval.entries.iter().map(|e| e.query.as_str()).collect();
    assert_eq!(order, ["cactus", "luxury yacht", "flaming phoenix"]);
    assert!(eval
        .entries
        .iter()
        .all(|e| e.instruction_id == Some(ArmId(0))));
}

#[test]
fn empty_generator_reply_skips_query_after_one_retry() {
    let calls = Arc::new(Mutex::new(0));
    let seen = calls.clone();
    let transport = ScriptedTransport::from_fn(move |role, req| {
        if req.user_content().ends_with("yacht") {
            *seen.lock().unwrap() += 1;
            return Ok("   ".into());
        }
        echo_generator(role, req)
    });
    let services = services_with(transport, Arc::new(NoProfessionalSource));
    let instr = Instruction::initial(ArmId(0), "Refine :{query}").unwrap();
    let mut arm = ArmStats::new(ArmId(0), 0);
    let eval = evaluate_instruction(
        &instr,
        &queries(&["cactus", "luxury yacht"]),
        &services,
        0,
        1,
        &mut arm,
    )
    .unwrap();
    assert_eq!(eval.skipped, ["luxury yacht"]);
    assert_eq!(eval.entries.len(), 1);
    assert_eq!(*calls.lock().unwrap(), 2);
}

#[test]
fn every_query_skipped_is_an_error() {
    let services = services_with(
        ScriptedTransport::from_fn(|_, _| Ok(String::new())),
        Arc::new(NoProfessionalSource),
    );
    let instr = Instruction::initial(ArmId(4), "Refine :{query}").unwrap();
    let mut arm = ArmStats::new(ArmId(4), 0);
    let err =
        evaluate_instruction(&instr, &queries(&["cactus"]), &services, 0, 1, &mut arm).unwrap_err();
    assert!(
        matches!(err, OptimizerError::AllQueriesSkipped(ArmId(4))),
        "{err:?}"
    );
    assert_eq!(arm.pulls, 0);
}

#[test]
fn unavailable_generator_aborts_the_iteration() {
    let transport = ScriptedTransport::from_fn(|_, _| Err(TransportError::Retryable("503".into())));
    let services = services_with(transport, Arc::new(NoProfessionalSource));
    let instr = Instruction::initial(ArmId(0), "Refine :{query}").unwrap();
    let mut arm = ArmStats::new(ArmId(0), 0);
    let err = evaluate_instruction(
        &instr,
        &queries(&["cactus", "yacht"]),
        &services,
        0,
        2,
        &mut arm,
    )
    .unwrap_err();
    assert!(
        matches!(err, OptimizerError::IterationAbort { .. }),
        "{err:?}"
    );
    assert!(matches!(
        err.root(),
        OptimizerError::Agent(AgentError::AgentUnavailable { attempts: 5, .. })
    ));
    assert_eq!(err.exit_code(), 3);
    assert_eq!(arm.pulls, 0);
}

struct FailingSource;

impl ProfessionalSource for FailingSource {
    fn fetch(&self, _query: &str) -> Result<Vec<String>, PoolError> {
        Err(PoolError::SourceUnavailable("connection refused".into()))
    }
}

#[test]
fn professional_outage_only_warns() {
    let services = Services {
        agent: ChatAgent::new(
            Arc::new(SimTransport),
            AgentSettings::default(),
            RetryPolicy::immediate(1),
        ),
        scorer: Arc::new(SimScorer { seed: 1 }),
        images: None,
        professional: Arc::new(FailingSource),
    };
    let config = RunConfig::new(queries(&["cactus", "yacht", "phoenix"]));
    let mut state = RunState::new(1, 1);
    let out = run_iteration(&mut state, &config, &services).unwrap();
    assert!(out
        .events
        .iter()
        .any(|e| matches!(e, RecordBody::Warning(w) if w.message.contains("connection refused"))));
}

#[test]
fn loop_invariants_hold_each_iteration() {
    let config = {
        let mut c = RunConfig::new(queries(&[
            "cactus",
            "Aquarium with sharks",
            "Farm with windmill",
            "flaming phoenix",
            "luxury yacht",
        ]));
        c.batch_size = 2;
        c.rng_seed = 11;
        c
    };
    let services = Services::sim_without_professional(11);
    let mut state = RunState::new(11, 11);
    for _ in 0..8 {
        let evaluated = state.instructions.len().max(1);
        let pool_before = state.pool.len();
        let out = run_iteration(&mut state, &config, &services).unwrap();
        let r = &out.record;
        assert!(state.pool.len() >= pool_before + config.batch_size * evaluated);
        assert!(r
            .new_instructions
            .iter()
            .all(|i| i.parent_id == Some(r.worst_arm)));
        assert!(state.instructions.len() <= config.selector.capacity);
        // Every surviving arm was pulled once per iteration it was present for.
        for arm in &state.arms {
            let instr = state.instruction(arm.arm_id).unwrap();
            let first_eval = if instr.parent_id.is_some() {
                instr.created_at + 1
            } else {
                0
            };
            assert_eq!(
                arm.pulls,
                u64::from(state.iteration.saturating_sub(first_eval)),
                "arm {}",
                arm.arm_id
            );
        }
    }
}

#[test]
fn gradient_calculator_sees_worst_batch_and_exemplars() {
    let prompts = Arc::new(Mutex::new(Vec::new()));
    let log = prompts.clone();
    let transport = ScriptedTransport::from_fn(move |role, req| match role {
        AgentRole::Generator => echo_generator(role, req),
        AgentRole::GradientCalculator => {
            log.lock().unwrap().push(req.user_content().to_string());
            Ok("Inference 1: too plain\nImprovement 1: add dramatic lighting".into())
        }
        AgentRole::InstructionModifier => Ok(
            "Instruction 1: Refine with dramatic lighting :{query}\nInstruction 2: unused extra"
                .into(),
        ),
    });
    let services = services_with(transport, Arc::new(NoProfessionalSource));
    let mut config = RunConfig::new(queries(&["cactus", "yacht", "phoenix", "lighthouse"]));
    config.batch_size = 3;
    config.init_instruction = "Refine :{query}".into();
    let mut state = RunState::new(5, 5);
    let out = run_iteration(&mut state, &config, &services).unwrap();

    let seen = prompts.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].matches("low_score_object").count(), 3);
    assert_eq!(seen[0].matches("high_score_object").count(), 3);
    assert!(seen[0].contains("This is the generator instruction:Refine :{query}"));
    // n = 2 but only one improvement: one child.
    assert_eq!(out.record.new_instructions.len(), 1);
    assert_eq!(
        out.record.new_instructions[0].text,
        "Refine with dramatic lighting :{query}"
    );
}

#[test]
fn unparseable_gradient_twice_is_a_parse_failure() {
    let transport = ScriptedTransport::from_fn(|role, req| match role {
        AgentRole::Generator => echo_generator(role, req),
        _ => Ok("no idea".into()),
    });
    let services = services_with(transport, Arc::new(NoProfessionalSource));
    let mut config = RunConfig::new(queries(&["cactus", "yacht"]));
    config.init_instruction = "Refine :{query}".into();
    config.batch_size = 2;
    let err = run_optimization(&config, &services, None).unwrap_err();
    assert!(
        matches!(err, OptimizerError::Agent(AgentError::ParseFailure { .. })),
        "{err:?}"
    );
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn same_seed_same_run() {
    let mut config = RunConfig::new(queries(&[
        "cactus",
        "yacht",
        "phoenix",
        "farm with windmill",
    ]));
    config.iterations = 4;
    config.batch_size = 2;
    config.rng_seed = 21;
    config.selector.strategy = promptforge::selector::Strategy::EpsilonGreedy;
    let a = run_optimization(&config, &Services::sim_without_professional(2), None)
        .unwrap()
        .0;
    let b = run_optimization(&config, &Services::sim_without_professional(2), None)
        .unwrap()
        .0;
    assert_eq!(a, b);
}
