use std::time::Duration;

use serde_json::json;

use qpots_client::{Client, ClientError, ExperimentState};

async fn client() -> Client {
    let (addr, _handle) = qpots_server::spawn("127.0.0.1:0").await.unwrap();
    Client::new(format!("http://{addr}/"))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stateless_calls() {
    let c = client().await;
    c.health().await.unwrap();
    let problems = c.problems().await.unwrap();
    assert_eq!(problems.len(), 12);
    let bc = c.problem("branin_currin").await.unwrap();
    assert_eq!((bc.dim, bc.num_objectives), (2, 2));

    let v = c.evaluate("branin_currin", &[vec![std::f64::consts::PI, 2.275]]).await.unwrap();
    assert!((v[0].objectives[0] + 0.397887).abs() < 1e-5);

    assert_eq!(c.hypervolume(&[vec![1.0, 1.0]], &[0.0, 0.0]).await.unwrap(), 1.0);
    assert_eq!(c.sobol(1, 1, 1).await.unwrap(), vec![vec![0.5]]);
    assert_eq!(c.analytic_front("linear_tradeoff", 3).await.unwrap().len(), 3);
    let rows = c.sweep("linear_tradeoff", &[10], &[5], &[0, 1]).await.unwrap();
    assert_eq!(rows.len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn api_errors_carry_status_and_message() {
    let c = client().await;
    match c.problem("nope").await {
        Err(ClientError::Api { status, message }) => {
            assert_eq!(status.as_u16(), 400);
            assert!(message.contains("nope"));
        }
        other => panic!("expected an api error, got {other:?}"),
    }
    assert!(matches!(c.experiment(7).await, Err(ClientError::Api { .. })));
    let unreachable = Client::new("http://127.0.0.1:9");
    assert!(matches!(unreachable.health().await, Err(ClientError::Http(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn experiment_round_trip() {
    let c = client().await;
    let started = c
        .start_experiment(&json!({"problem": "zdt3:3", "policy": "sobol", "n_seed": 4, "budget": 8, "q": 2, "replicates": 3}))
        .await
        .unwrap();
    let mut polls = 0;
    let done = c.wait(started.id, Duration::from_millis(20), |_| polls += 1).await.unwrap();
    assert!(polls >= 1);
    assert_eq!(done.state, ExperimentState::Completed);
    assert_eq!(done.evals, vec![8, 8, 8]);
    let traces = c.traces(started.id).await.unwrap();
    assert_eq!(traces.len(), 3);
    let summary = c.summary(started.id).await.unwrap();
    assert_eq!(summary.last().unwrap().evals, 8);
    assert_eq!(c.experiments().await.unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ask_tell() {
    let c = client().await;
    let sites: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 + 0.15 * i as f64]).collect();
    let values = c.evaluate("linear_tradeoff", &sites).await.unwrap();
    let out = c
        .acquire(&json!({"problem": "linear_tradeoff", "sites": sites, "values": values, "q": 2,
                         "evolver": {"pop_size": 20, "n_generations": 10, "crossover_prob": 0.9,
                                     "crossover_eta": 15.0, "mutation_prob": null, "mutation_eta": 20.0, "seed": 0}}))
        .await
        .unwrap();
    assert_eq!(out.points.len(), 2);
    assert!(out.attempts >= 1);
}
