//! Fixed inputs for the prompt golden files, shared with the CLI
//! acceptance suite.

use std::path::{Path, PathBuf};

use propforge_core::capture::{build_page_capture, Bounds, RasterImage, WidgetAttributes};
use propforge_core::grounding::{build_annotation_prompt, bundled_annotation_demos, EnrichedWidget, WidgetAnnotation};
use propforge_core::prompt::PromptBundle;
use propforge_core::synthesis::{
    build_synthesis_prompt, bundled_api_catalog, bundled_synthesis_demos, parse_description,
};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn widget(
    text: Option<&str>,
    id: Option<&str>,
    desc: Option<&str>,
    class: &str,
    bounds: (u32, u32, u32, u32),
    idx: usize,
) -> WidgetAttributes {
    WidgetAttributes {
        text: text.map(str::to_string),
        resource_id: id.map(str::to_string),
        content_description: desc.map(str::to_string),
        class_name: class.to_string(),
        clickable: true,
        bounds: Bounds::new(bounds.0, bounds.1, bounds.2, bounds.3).unwrap(),
        node_index: idx,
    }
}

pub fn annotation_prompt() -> PromptBundle {
    let w = widget(
        None,
        Some("com.amaze.filemanager:id/search"),
        Some("Search"),
        "android.widget.ImageButton",
        (40, 8, 56, 24),
        1,
    );
    let page = build_page_capture("Amaze", "MainActivity", None, vec![w.clone()]).unwrap();
    let shot = RasterImage::filled(64, 96, [255, 255, 255, 255]);
    build_annotation_prompt(&page, &w, &bundled_annotation_demos(), Some(&shot)).unwrap()
}

pub fn annotation_prompt_without_image() -> PromptBundle {
    let w = widget(
        Some("Download"),
        Some("com.amaze.filemanager:id/file_name"),
        None,
        "android.widget.TextView",
        (0, 40, 64, 56),
        2,
    );
    let page = build_page_capture("Amaze", "MainActivity", None, vec![w.clone()]).unwrap();
    build_annotation_prompt(&page, &w, &bundled_annotation_demos(), None).unwrap()
}

pub fn synthesis_prompt() -> PromptBundle {
    let desc = parse_description(
        "**Property:** open_directory\n**Precondition:** file names and the search button exist\n**Function Body:**\n1. collect all file names\n2. pick a name that does not contain \".\"\n3. click it\n4. assert the path contains the selected item\n",
    )
    .unwrap();
    let mk = |w: WidgetAttributes, label: &str, func: &str| {
        let mut e = EnrichedWidget::new("golden", w);
        e.annotation = Some(WidgetAnnotation {
            semantic_label: label.into(),
            functionality: func.into(),
        });
        e
    };
    let context = vec![
        mk(
            widget(
                None,
                Some("com.amaze.filemanager:id/search"),
                Some("Search"),
                "android.widget.ImageButton",
                (40, 8, 56, 24),
                1,
            ),
            "Search button",
            "Opens the file search bar",
        ),
        mk(
            widget(
                Some("Download"),
                Some("com.amaze.filemanager:id/file_name"),
                None,
                "android.widget.TextView",
                (0, 40, 64, 56),
                2,
            ),
            "File name",
            "Opens the Download directory",
        ),
    ];
    build_synthesis_prompt(&desc, &context, bundled_api_catalog(), &bundled_synthesis_demos()).unwrap()
}

/// (golden file name, rendered prompt) pairs.
pub fn all() -> Vec<(&'static str, String)> {
    vec![
        ("annotation.prompt.txt", annotation_prompt().serialize()),
        (
            "annotation_no_image.prompt.txt",
            annotation_prompt_without_image().serialize(),
        ),
        ("synthesis.prompt.txt", synthesis_prompt().serialize()),
    ]
}
