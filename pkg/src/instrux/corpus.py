"""Default instruction corpus: the shipped task presets plus usage examples.

``DEFAULT_INSTRUCTIONS`` maps a task name to its instruction string, exactly
as shipped (one known source typo corrected: STRUCT in table_to_text).
Entries in ``NEEDS_PROMPT_TYPE`` require the custom PROMPT slot type to be
registered before parsing.
"""

DEFAULT_INSTRUCTIONS: dict[str, str] = {
    # text-only tasks
    "cola": 'is the text "[TEXT:s]" grammatically correct?  -> is the text "[TEXT:s,no_loss]" grammatically correct? [TEXT:label,closed_set]',
    "sst2": 'is the sentiment of text "[TEXT:s]" positive or negative? -> is the sentiment of text "[TEXT:s,no_loss]" positive or negative? [TEXT:label,closed_set]',
    "qqp": 'is question "[TEXT:q1]" and question "[TEXT:q2]" equivalent? -> is question "[TEXT:q1,no_loss]" and question "[TEXT:q2,no_loss]" equivalent? [TEXT:label,closed_set]',
    "mrpc": 'does text1 "[TEXT:s1]" and text2 "[TEXT:s2]" have the same semantics? -> does text1 "[TEXT:s1,no_loss]" and text2 "[TEXT:s2,no_loss]" have the same semantics? [TEXT:label,closed_set]',
    "mnli": 'can text1 [TEXT:s1] imply text2 [TEXT:s2]? -> can text1 [TEXT:s1,no_loss] imply text2 [TEXT:s2,no_loss]? [TEXT:label,closed_set]',
    "qnli": 'does "[TEXT:s]" contain the answer to question "[TEXT:q]"? -> does "[TEXT:s,no_loss]" contain the answer to question "[TEXT:q,no_loss]"? [TEXT:label,closed_set]',
    "rte": 'can text1 "[TEXT:s1]" imply text2 "[TEXT:s2]"? -> can text1 "[TEXT:s1,no_loss]" imply text2 "[TEXT:s2,no_loss]"? [TEXT:label,closed_set]',
    "summarization": 'what is the summary of article " [TEXT:src] "? -> [TEXT:tgt,noise_ratio=0.2]',
    "natural_instructions": "[TEXT:instruction] [TEXT:examples] [TEXT:src] -> [TEXT:tgt,max_length=128]",
    "text_infilling": 'what is the complete text of "[TEXT:text,mask_ratio=0.3]"? -> [TEXT:text]',
    # image-related tasks
    "image_classification": "[IMAGE:image,preprocess=imagenet] what does the image describe? -> [TEXT:label_name,closed_set]",
    "caption": "[IMAGE:img] what does the image describe? -> [TEXT:cap]",
    "caption_short_line": "[IMAGE:img] please use a short line to describe the image. -> [TEXT:cap]",
    "visual_entailment": '[IMAGE:img] can image and text1 "[TEXT:cap]" imply text2 "[TEXT:hyp]"? -> can image and text1 "[TEXT:cap,no_loss]" imply text2 "[TEXT:hyp,no_loss]"? [TEXT:label,closed_set]',
    "vqa": "[IMAGE:image] [TEXT:question] -> [TEXT:answer,closed_set]",
    "visual_grounding": '[IMAGE:img] which region does the text "[TEXT:cap]" describe? -> [BOX:region_coord]',
    "grounded_caption": "[IMAGE:img] what does the region describe? region [BOX:region_coord] -> [TEXT:cap]",
    "object_detection": "[IMAGE:img] what are the objects in the image? -> [ [BOX] [TEXT] ]*",
    "image_infilling": 'what is the complete image of "[IMAGE:img,mask_ratio=0.5]"? -> [IMAGE,preprocessor=image_vqgan,adapter=image_vqgan]',
    "image_generation": 'what is the complete image? caption: "[TEXT:cap]"? -> [IMAGE,preprocessor=image_vqgan,adapter=image_vqgan]',
    # video-related tasks
    "video_classification": "[VIDEO:video] what does the video describe? -> [TEXT:label_name,closed_set]",
    "video_caption": "[VIDEO:video] what does the video describe? -> [TEXT:cap]",
    "video_qa": "[VIDEO:video] [TEXT:question] -> [TEXT:answer,is_label]",
    # audio-related tasks
    "asr": "[AUDIO:wav] what is the text corresponding to the voice? -> [TEXT:text]",
    "tts": "[TEXT:text,preprocessor=text_to_phone] what is the voice corresponding to the text? -> [AUDIO:fbank,adapter=audio_tgt_fbank]",
    # structural-data tasks
    "text_to_sql": '[TEXT:src]; structured knowledge: "[STRUCT:database,preprocessor=database_to_text]". generating sql code. -> [TEXT:tgt]',
    "table_to_text": 'structured knowledge: "[STRUCT:database,preprocessor=table_to_text]". how to describe the tripleset? -> [TEXT:tgt]',
    "table_qa": 'structured knowledge: "[STRUCT:database,preprocessor=table_to_text]". what is the answer of the question "[TEXT:src]"? ->  [TEXT:tgt]',
    "sudoku": '"[STRUCT:src,preprocessor=sudoku_to_text]". solve the sudoku. -> [STRUCT:tgt,preprocessor=sudoku_to_text]',
    # motion task
    "text_to_motion": "motion capture: [TEXT:title] -> [MOTION:bvh_frames]",
    # usage illustrations
    "mnli_prompt_prefix": "can text1 [TEXT:s1] imply text2 [TEXT:s2]? -> can text1 [TEXT:s1,no_loss] imply text2 [TEXT:s2,no_loss] ? [TEXT:label,closed_set]",
    "detection_variable_length": "[IMAGE:img] detect the objects in the image. -> [[BOX][TEXT]]*",
    "caption_prompt_tuning": "[IMAGE:img] [PROMPT:pt,len=100,prefix-tuning] -> [TEXT:cap]",
    "summarization_plain": 'what is the summary of article "[TEXT:src]"? -> [TEXT:tgt]',
    "image_generation_alt": 'what is the complete image? caption: "[TEXT:text]"? -> [IMAGE,preprocess=image_vqgan,adaptor=image_vqgan]',
    "grounding_to_box": '[IMAGE:img] which region does the text "[TEXT:cap]" describe? -> [BOX:box]',
    "tripleset_description": 'structured knowledge: "[STRUCT:database]". how to describe the tripleset ? -> [TEXT:tgt]',
    "asr_phone": "[AUDIO:wav] what is the text corresponding to the voice? -> [TEXT:text,preprocess=text_phone]",
    "motion_capture": "motion capture: [TEXT:text] -> [MOTION:bvh_frames]",
    "grounding_spaced_quotes": '[IMAGE:img] which region does the text " [TEXT:cap] " describe? -> [BOX:region_coord]',
    "asr_txt": "[AUDIO:wav] what is the text corresponding to the voice? -> [TEXT:txt]",
}

NEEDS_PROMPT_TYPE = {"caption_prompt_tuning"}
