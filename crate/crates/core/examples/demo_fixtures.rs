//! Regenerates the demo data under `fixtures/demo`:
//!
//! ```text
//! cargo run -p aqua-core --example demo_fixtures -- fixtures/demo
//! ```
//!
//! Everything is derived from fixed seeds, so rerunning produces the same
//! bytes. The chat fixture is keyed by prompt hashes, so it is written last,
//! after the prompts for the headline question have been built with the
//! freshly generated icon database and index.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use aqua_core::clients::ClientSet;
use aqua_core::engine::{answer, Condition, Deps, PipelineConfig, Question};
use aqua_core::icon_db::build_from_sources;
use aqua_core::imaging::content_hash;
use aqua_core::retrieval::{build_index_from_dir, WhitespaceTokenCounter};
use aqua_core::synth::{toolbar, IconGenerator};
use aqua_core::video_context::{Sentence, Transcript};
use aqua_core::vision::VisualAnchor;
use image::DynamicImage;
use serde_json::json;

const DOC_ICONS: &[&str] = &["Extrude", "Hole", "Fillet", "Shell", "Create Sketch", "Revolve"];
const COMMAND_ICONS: &[&str] = &["Marking Menu", "Extrude", "Chamfer", "Press Pull", "Combine", "Measure"];

const MENU_QUESTION: &str = "How did you get this menu to appear?";
const FULL_ANSWER: &str = "The menu shown is the Marking Menu in Autodesk Fusion 360. It appears when you right-click anywhere in the canvas. This radial menu provides quick access to frequently used commands. To activate a command, drag the cursor in the direction of the command, then click anywhere in the highlighted wedge.";
const VIDEO_ANSWER: &str = "The menu in Autodesk Fusion 360 typically appears when you right-click on the workspace or when you select a specific tool from the toolbar at the top of the screen. In this case, the menu likely appeared when the instructor selected the \"Create Sketch\" tool.";
const QUESTION_ANSWER: &str = "The menu in Autodesk Fusion 360 typically appears by either clicking on the relevant icon on the toolbar or by right-clicking to bring up a context menu. The exact method may vary depending on the specific menu you're referring to in the tutorial.";
const FALLBACK_ANSWER: &str = "I could not find an answer.";

const ARTICLES: &[(&str, &str, &[&str])] = &[
    (
        "marking_menu.html",
        "Marking Menu",
        &[
            "The marking menu is a radial menu that appears when you right-click anywhere in the canvas.",
            "It provides quick access to frequently used commands such as Repeat, Extrude and Press Pull. To activate a command, drag the cursor in the direction of the command, then click anywhere in the highlighted wedge.",
            "The overflow menu below the marking menu lists additional commands for the current selection.",
        ],
    ),
    (
        "extrude.html",
        "Extrude",
        &[
            "Extrude adds depth to a closed sketch profile or a planar face.",
            "Select a profile, then drag the distance arrow or enter a value in the Distance field. Choose Join, Cut or New Body to decide how the result combines with existing bodies.",
            "Press E to start Extrude from the keyboard.",
        ],
    ),
    (
        "fillet.html",
        "Fillet",
        &[
            "Fillet rounds the selected edges of a body with a constant or variable radius.",
            "Select edges, then drag the radius manipulator. Use the Tangent Chain option to include tangent edges automatically.",
        ],
    ),
    (
        "shell.html",
        "Shell",
        &[
            "Shell hollows a solid body and leaves walls of a fixed thickness.",
            "Select the faces to remove, then set Inside Thickness. Shell is useful for reducing material in printed parts.",
        ],
    ),
    (
        "sketch.html",
        "Create Sketch",
        &[
            "Create Sketch starts a new sketch on a plane or planar face.",
            "After choosing the plane, use Line, Rectangle and Circle to draw the profile. Finish Sketch returns to the modeling workspace.",
        ],
    ),
];

fn sentences(items: &[(f64, f64, &str)]) -> Vec<Sentence> {
    items.iter().map(|&(s, e, t)| Sentence { text: t.to_string(), start_s: s, end_s: e }).collect()
}

fn phone_stand() -> Transcript {
    Transcript {
        video_id: "phone_stand".into(),
        title: "Modeling a Phone Stand".into(),
        sentences: sentences(&[
            (0.0, 4.0, "Welcome, today we will model a simple phone stand."),
            (4.0, 9.5, "Start by creating a sketch on the XY plane."),
            (9.5, 15.0, "Draw a rectangle eighty by sixty millimeters."),
            (15.0, 18.0, "Now right-click anywhere in the canvas."),
            (18.0, 24.0, "Pick Extrude and drag the arrow up to 10 mm."),
            (24.0, 30.0, "Next, add a fillet to the front edge."),
            (30.0, 36.0, "Finally, shell the body to save material."),
        ]),
    }
}

fn drill_guide() -> Transcript {
    Transcript {
        video_id: "drill_guide".into(),
        title: "Designing a Drill Guide".into(),
        sentences: sentences(&[
            (0.0, 5.0, "In this video we design a drill guide block."),
            (5.0, 11.0, "Sketch a square and extrude it twenty millimeters."),
            (11.0, 17.0, "Use the Hole tool on the top face."),
            (17.0, 23.0, "Set the diameter to six millimeters and the extent to all."),
            (23.0, 29.0, "Chamfer the top edges so the bit enters easily."),
        ]),
    }
}

fn write_png(img: &DynamicImage, path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

fn write_json(value: &impl serde::Serialize, path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut s = serde_json::to_string_pretty(value).unwrap();
    s.push('\n');
    fs::write(path, s).unwrap();
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures/demo".to_string());
    let out = Path::new(&out);
    if out.exists() {
        fs::remove_dir_all(out).unwrap();
    }

    // Icons: one generator stream per name, so a name always gets the same
    // image whichever list it appears in.
    let icon_for = |name: &str| {
        let seed = name.bytes().fold(1469598103934665603u64, |h, b| (h ^ u64::from(b)).wrapping_mul(1099511628211));
        IconGenerator::new(seed).icon(48)
    };
    let mut items = String::new();
    for name in DOC_ICONS {
        let file = format!("img/{}.png", name.to_lowercase().replace(' ', "_"));
        write_png(&icon_for(name), &out.join("help").join(&file));
        items.push_str(&format!("    <li>{name} <img src=\"{file}\" alt=\"\"> {name} tool.</li>\n"));
    }
    items.push_str("    <li>Keyboard shortcuts are listed on the next page.</li>\n");
    fs::write(
        out.join("help/tools.html"),
        format!("<!DOCTYPE html>\n<html>\n<head><title>Tool reference</title></head>\n<body>\n  <ul>\n{items}  </ul>\n</body>\n</html>\n"),
    )
    .unwrap();
    for name in COMMAND_ICONS {
        write_png(&icon_for(name), &out.join("commands").join(format!("{name}.png")));
    }

    for (file, title, paras) in ARTICLES {
        let body: String = paras.iter().map(|p| format!("  <p>{p}</p>\n")).collect();
        let html = format!("<!DOCTYPE html>\n<html>\n<head><title>{title}</title></head>\n<body>\n  <h1>{title}</h1>\n{body}</body>\n</html>\n");
        fs::create_dir_all(out.join("corpus/docs")).unwrap();
        fs::write(out.join("corpus/docs").join(file), html).unwrap();
    }
    let videos = [phone_stand(), drill_guide()];
    for t in &videos {
        write_json(t, &out.join("videos").join(format!("{}.json", t.video_id)));
        write_json(t, &out.join("corpus/transcripts").join(format!("{}.json", t.video_id)));
    }

    // Anchor crops.
    let menu = icon_for("Marking Menu");
    let (tools, _) = toolbar(&["Extrude", "Hole", "Fillet", "Shell"].map(icon_for), 260, 110, 16, 10);
    let hole = icon_for("Hole");
    let chamfer = icon_for("Chamfer");
    let mut workspace = IconGenerator::new(5).workspace(160, 120);
    workspace = workspace.blur(1.0);
    let crops = [
        ("anchors/marking_menu.png", &menu),
        ("anchors/create_toolbar.png", &tools),
        ("anchors/hole.png", &hole),
        ("anchors/chamfer.png", &chamfer),
        ("anchors/viewport.png", &workspace),
    ];
    for (rel, img) in crops {
        write_png(img, &out.join(rel));
    }

    let captions: BTreeMap<String, &str> = [
        (&menu, "a circular menu around the cursor."),
        (&tools, "a toolbar with four icons"),
        (&hole, "an icon of a cylinder with a hole"),
        (&chamfer, "an icon of a cube with a beveled edge"),
        (&workspace, "a gray 3D viewport"),
    ]
    .into_iter()
    .map(|(img, text)| (content_hash(img), text))
    .collect();
    let ocr: BTreeMap<String, &str> =
        [(&menu, "Repeat Extrude"), (&tools, "CREATE\nMODIFY")].into_iter().map(|(img, t)| (content_hash(img), t)).collect();
    write_json(&captions, &out.join("clients/captions.json"));
    write_json(&ocr, &out.join("clients/ocr.json"));
    write_json(&json!({ "*": FALLBACK_ANSWER }), &out.join("clients/chat.json"));

    let questions = [
        json!({"id": "q01", "video_ref": "videos/phone_stand.json", "text": MENU_QUESTION,
               "anchors": [{"image_path": "anchors/marking_menu.png", "timestamp_s": 19.0, "label": "#Anchor1"}]}),
        json!({"id": "q02", "video_ref": "videos/phone_stand.json", "text": "Which of the tools in #Anchor1 makes the edges round?",
               "anchors": [{"image_path": "anchors/create_toolbar.png", "timestamp_s": 25.0, "label": "#Anchor1"}]}),
        json!({"id": "q03", "video_ref": "videos/phone_stand.json", "text": "Why does the part in #Anchor1 look hollow?",
               "anchors": [{"image_path": "anchors/viewport.png", "timestamp_s": 33.0, "label": "#Anchor1"}]}),
        json!({"id": "q04", "video_ref": "videos/drill_guide.json", "text": "How do I set the depth of #Anchor1 to go all the way through?",
               "anchors": [{"image_path": "anchors/hole.png", "timestamp_s": 18.0, "label": "#Anchor1"}]}),
        json!({"id": "q05", "video_ref": "videos/drill_guide.json", "text": "What is the difference between #Anchor1 and #Anchor2?",
               "anchors": [{"image_path": "anchors/chamfer.png", "timestamp_s": 24.0, "label": "#Anchor1"},
                           {"image_path": "anchors/hole.png", "timestamp_s": 12.0, "label": "#Anchor2"}]}),
        json!({"id": "q06", "video_ref": "videos/drill_guide.json", "text": "Can I change the size of the square in #Anchor1 later?",
               "anchors": [{"image_path": "anchors/viewport.png", "timestamp_s": 7.0, "label": "#Anchor1"}]}),
    ];
    let lines: String = questions.iter().map(|q| format!("{q}\n")).collect();
    fs::write(out.join("questions.jsonl"), lines).unwrap();

    // Prompts of the headline question, built from the generated data.
    let config = PipelineConfig::default();
    let counter = WhitespaceTokenCounter;
    let clients = ClientSet::fixture(&out.join("clients")).unwrap();
    let manifest = build_from_sources(Some(&out.join("help")), Some(&out.join("commands")), &config.software_profile)
        .unwrap()
        .manifest;
    let index =
        build_index_from_dir(&out.join("corpus"), &counter, clients.embed.as_ref(), config.chunk_limit_tokens, 0)
            .unwrap()
            .index;
    let question = Question {
        id: "q01".into(),
        video_id: "phone_stand".into(),
        text: MENU_QUESTION.into(),
        anchors: vec![VisualAnchor::from_crop("q01/#Anchor1", "phone_stand", "#Anchor1", 19.0, menu.clone()).unwrap()],
        asked_at_s: None,
    };
    let deps = Deps {
        manifest: Some(&manifest),
        index: Some(&index),
        transcript: Some(&videos[0]),
        clients: &clients,
        counter: &counter,
        config: &config,
        cached_descriptions: None,
    };
    let mut chat = BTreeMap::new();
    chat.insert("*".to_string(), FALLBACK_ANSWER.to_string());
    for (condition, text) in [
        (Condition::QuestionOnly, QUESTION_ANSWER),
        (Condition::QuestionVideo, VIDEO_ANSWER),
        (Condition::FullPipeline, FULL_ANSWER),
    ] {
        let a = answer(&question, condition, &deps).unwrap();
        chat.insert(a.trace.prompt_sha256.clone(), text.to_string());
        println!("{condition}: prompt {} tokens, sha256 {}", a.trace.tokens.prompt_tokens, a.trace.prompt_sha256);
    }
    write_json(&chat, &out.join("clients/chat.json"));
    println!("wrote {}", out.display());
}
