use promptcl::data::{Dataset, Example, TaskKind};
use promptcl::{HashSentenceEncoder, RawInput, ReferenceBackend, ReferenceConfig, TemplateSet, TrainConfig, Verbalizer};

fn main() {
    let animals = ["cat", "dog", "fox", "owl", "elk", "bee", "ant", "hen"];
    let agree = ["indeed", "surely", "truly", "clearly"];
    let deny = ["never", "hardly", "scarcely", "barely"];
    let mut examples = Vec::new();
    for (i, animal) in animals.iter().enumerate() {
        for j in 0..8 {
            let entails = (i + j) % 2 == 0;
            let marker = if entails { agree[j % 4] } else { deny[j % 4] };
            let label = if entails { "entailment" } else { "contradiction" };
            examples.push(Example {
                raw: RawInput::pair(format!("a {animal} rests"), format!("it {marker} does")).unwrap(),
                label: label.to_string(),
            });
        }
    }
    let corpus = Dataset::new(examples, TaskKind::SentencePair).unwrap();
    let templates = TemplateSet::new(vec![
        promptcl::Template::parse("p0", "{input1} ? {mask} , {input2}").unwrap(),
        promptcl::Template::parse("p1", "{input1} . {mask} , {input2}").unwrap(),
    ]).unwrap();
    let pairs = vec![
        ("contradiction".to_string(), "no".to_string()),
        ("entailment".to_string(), "yes".to_string()),
    ];
    for (lr, steps, t) in [(0.2, 60, 0.5), (0.2, 200, 0.5), (0.5, 200, 0.5), (0.2, 200, 0.0), (0.5, 200, 0.0), (1.0, 300, 0.0)] {
        let mut backend = ReferenceBackend::from_task(&corpus, &templates, &["no".to_string(), "yes".to_string()],
            ReferenceConfig { hidden_dim: 8, seed: 11 }).unwrap();
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let encoder = HashSentenceEncoder::default();
        let split = promptcl::data::make_kshot(&corpus, &corpus, 4, 7).unwrap();
        let config = TrainConfig {
            learning_rate: lr, batch_size: 4, max_steps: steps, eval_every: steps,
            loss: promptcl::ContrastiveConfig { t, a: t, ..Default::default() },
            ..TrainConfig::default()
        };
        let m = promptcl::train_run(&mut backend, &encoder, &split, &templates, &verbalizer, &config).unwrap();
        let acc = promptcl::evaluate(&backend, &split.train, templates.main(), &verbalizer).unwrap();
        println!("lr={lr} steps={steps} t=a={t}: first_ce={:.4} last_ce={:.4} train_acc={acc:.3}",
                 m.steps[0].losses.ce, m.steps.last().unwrap().losses.ce);
    }
}
